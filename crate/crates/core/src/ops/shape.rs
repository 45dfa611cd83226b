use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, ca, ha, wa) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    for (axis, x, y) in [("batch", na, nb), ("height", ha, hb), ("width", wa, wb)] {
        if x != y {
            return Err(Error::Dimension {
                op: "concat_channels",
                axis,
                expected: x,
                found: y,
            });
        }
    }
    let plane = ha * wa;
    let mut out = Vec::with_capacity(na * (ca + cb) * plane);
    for n in 0..na {
        out.extend_from_slice(&a.data()[n * ca * plane..(n + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[n * cb * plane..(n + 1) * cb * plane]);
    }
    Tensor::new(vec![na, ca + cb, ha, wa], out)
}

/// Inverse of [`concat_channels`]: channels `[0, first)` and the rest.
pub fn split_channels(x: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4("split_channels")?;
    if first > c {
        return Err(Error::Dimension {
            op: "split_channels",
            axis: "channels",
            expected: first,
            found: c,
        });
    }
    let plane = h * w;
    let rest = c - first;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * rest * plane);
    for i in 0..n {
        let s = &x.data()[i * c * plane..(i + 1) * c * plane];
        a.extend_from_slice(&s[..first * plane]);
        b.extend_from_slice(&s[first * plane..]);
    }
    Ok((
        Tensor::new(vec![n, first, h, w], a)?,
        Tensor::new(vec![n, rest, h, w], b)?,
    ))
}
