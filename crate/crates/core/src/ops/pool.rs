//! 2x2 max pooling and nearest-neighbour 2x upsampling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output of [`maxpool2`]: pooled values plus, for each output element, the
/// flat index of the input element that won the window.
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Disjoint 2x2 max pooling. Ties go to the first element in row-major order.
pub fn maxpool2(input: &Tensor) -> Result<Pooled> {
    let (n, c, h, w) = input.dims4("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatial {
            height: h,
            width: w,
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![n, c, ho, wo], out)?,
        argmax,
    })
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    dx
}

/// Repeats every row and column twice.
pub fn upsample2_nearest(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("upsample2_nearest")?;
    let (ho, wo) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for y in 0..h {
            let (r0, r1) = dst[2 * y * wo..(2 * y + 2) * wo].split_at_mut(wo);
            for (xx, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
                r0[2 * xx] = v;
                r0[2 * xx + 1] = v;
            }
            r1.copy_from_slice(r0);
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

/// Each input cell receives the sum of the four output cells it fed.
pub fn upsample2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, ho, wo) = grad_out.dims4("upsample2_nearest backward")?;
    let (h, w) = (ho / 2, wo / 2);
    let g = grad_out.data();
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &g[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let t = 2 * y * wo + 2 * x;
                dst[y * w + x] = src[t] + src[t + 1] + src[t + wo] + src[t + wo + 1];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], dx)
}
