//! PReLU and sigmoid.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resolves the slope for channel `c`: a one-element alpha is shared by
/// every channel, otherwise there is one slope per channel.
fn alpha_for(alpha: &Tensor, channels: usize) -> Result<impl Fn(usize) -> f64 + '_> {
    let a = alpha.data();
    if a.len() != 1 && a.len() != channels {
        return Err(Error::Dimension {
            op: "prelu alpha",
            axis: "channels",
            expected: channels,
            found: a.len(),
        });
    }
    Ok(move |c: usize| if a.len() == 1 { a[0] } else { a[c] })
}

/// `(planes, channels, plane_len)` view used for per-channel broadcasting.
fn channel_layout(input: &Tensor) -> (usize, usize, usize) {
    match input.shape() {
        [n, c, rest @ ..] => (*n, *c, rest.iter().product()),
        [len] => (1, 1, *len),
        [] => (1, 1, 1),
    }
}

pub fn prelu(input: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    let (n, c, len) = channel_layout(input);
    let slope = alpha_for(alpha, c)?;
    let mut out = input.clone();
    let d = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let a = slope(ch);
            let base = (b * c + ch) * len;
            for v in &mut d[base..base + len] {
                if *v <= 0.0 {
                    *v *= a;
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_alpha)`; `d_alpha` has the shape of `alpha`.
pub fn prelu_backward(input: &Tensor, alpha: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    input.check_same_shape(grad_out, "prelu backward")?;
    let (n, c, len) = channel_layout(input);
    let slope = alpha_for(alpha, c)?;
    let mut dx = grad_out.clone();
    let mut da = Tensor::zeros(alpha.shape());
    let shared = alpha.numel() == 1;
    let x = input.data();
    let g = grad_out.data();
    let dxd = dx.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let a = slope(ch);
            let base = (b * c + ch) * len;
            let mut acc = 0.0;
            for i in base..base + len {
                if x[i] <= 0.0 {
                    dxd[i] = g[i] * a;
                    acc += g[i] * x[i];
                }
            }
            da.data_mut()[if shared { 0 } else { ch }] += acc;
        }
    }
    Ok((dx, da))
}

/// Logistic function, branching on sign so `exp` never overflows.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Gradient expressed through the forward output `y`.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.check_same_shape(grad_out, "sigmoid backward")?;
    let mut dx = grad_out.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        *d *= y * (1.0 - y);
    }
    Ok(dx)
}
