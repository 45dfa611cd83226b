//! 2-D convolution via tiled im2col + GEMM.
//!
//! The column buffer is built a band of output rows at a time so memory stays
//! bounded at 384x384 with 5x5 kernels. Each output element is produced by a
//! single GEMM call with a fixed reduction order, so results are
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Upper bound on the im2col buffer, in elements.
const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on every side.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Self> {
        let (n, cin, h, w) = input.dims4("conv2d")?;
        let (cout, kcin, kh, kw) = kernel.dims4("conv2d kernel")?;
        if kcin != cin {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "channels",
                expected: kcin,
                found: cin,
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Contract(format!(
                "conv2d kernel must have odd size, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be >= 1".into()));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        if h + 2 * pad_h < kh {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "height",
                expected: kh,
                found: h,
            });
        }
        if w + 2 * pad_w < kw {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "width",
                expected: kw,
                found: w,
            });
        }
        let ho = (h + 2 * pad_h - kh) / stride + 1;
        let wo = (w + 2 * pad_w - kw) / stride + 1;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            ho,
            wo,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.k() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// A 1x1 stride-1 convolution reads the input plane directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = Geom::new(input, kernel, stride, padding)?;
    if bias.numel() != g.cout {
        return Err(Error::Dimension {
            op: "conv2d bias",
            axis: "channels",
            expected: g.cout,
            found: bias.numel(),
        });
    }
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; g.n * g.cout * plane_out];
    for (co, &b) in bias.data().iter().enumerate() {
        for n in 0..g.n {
            let base = (n * g.cout + co) * plane_out;
            out[base..base + plane_out].fill(b);
        }
    }
    let k = g.k();
    let rows = g.band_rows();
    let mut col = vec![0.0; k * rows * g.wo];
    let in_plane = g.cin * g.h * g.w;
    for n in 0..g.n {
        let x = &input.data()[n * in_plane..(n + 1) * in_plane];
        let y = &mut out[n * g.cout * plane_out..(n + 1) * g.cout * plane_out];
        let mut oy0 = 0;
        while oy0 < g.ho {
            let band = rows.min(g.ho - oy0);
            let p = band * g.wo;
            let (src, src_stride): (&[f64], usize) = if g.is_pointwise() {
                (&x[oy0 * g.w..], g.h * g.w)
            } else {
                im2col(x, &g, oy0, band, &mut col[..k * p]);
                (&col[..k * p], p)
            };
            gemm(
                g.cout,
                k,
                p,
                kernel.data(),
                (k, 1),
                src,
                (src_stride, 1),
                1.0,
                &mut y[oy0 * g.wo..],
                (plane_out, 1),
            );
            oy0 += band;
        }
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out)
}

pub struct Conv2dGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
    need_input: bool,
) -> Result<Conv2dGrads> {
    let g = Geom::new(input, kernel, stride, padding)?;
    let expect = [g.n, g.cout, g.ho, g.wo];
    if grad_out.shape() != expect {
        return Err(Error::Contract(format!(
            "conv2d backward: upstream gradient {:?} does not match output {:?}",
            grad_out.shape(),
            expect
        )));
    }
    let plane_out = g.ho * g.wo;
    let k = g.k();
    let in_plane = g.cin * g.h * g.w;

    let mut d_bias = vec![0.0; g.cout];
    for n in 0..g.n {
        for (co, db) in d_bias.iter_mut().enumerate() {
            let base = (n * g.cout + co) * plane_out;
            *db += grad_out.data()[base..base + plane_out].iter().sum::<f64>();
        }
    }

    let mut d_kernel = vec![0.0; g.cout * k];
    let mut d_input = if need_input {
        vec![0.0; g.n * in_plane]
    } else {
        Vec::new()
    };
    let rows = g.band_rows();
    let mut col = vec![0.0; k * rows * g.wo];
    let mut d_col = if need_input && !g.is_pointwise() {
        vec![0.0; k * rows * g.wo]
    } else {
        Vec::new()
    };
    for n in 0..g.n {
        let x = &input.data()[n * in_plane..(n + 1) * in_plane];
        let dy = &grad_out.data()[n * g.cout * plane_out..(n + 1) * g.cout * plane_out];
        let mut oy0 = 0;
        while oy0 < g.ho {
            let band = rows.min(g.ho - oy0);
            let p = band * g.wo;
            let dy_band = &dy[oy0 * g.wo..];
            let (src, src_stride): (&[f64], usize) = if g.is_pointwise() {
                (&x[oy0 * g.w..], g.h * g.w)
            } else {
                im2col(x, &g, oy0, band, &mut col[..k * p]);
                (&col[..k * p], p)
            };
            // dK[cout x k] += dY[cout x p] * col^T[p x k]
            gemm(
                g.cout,
                p,
                k,
                dy_band,
                (plane_out, 1),
                src,
                (1, src_stride),
                1.0,
                &mut d_kernel,
                (k, 1),
            );
            if need_input {
                let dx = &mut d_input[n * in_plane..(n + 1) * in_plane];
                if g.is_pointwise() {
                    // dX[cin x p] += K^T[cin x cout] * dY[cout x p]
                    gemm(
                        k,
                        g.cout,
                        p,
                        kernel.data(),
                        (1, k),
                        dy_band,
                        (plane_out, 1),
                        1.0,
                        &mut dx[oy0 * g.w..],
                        (g.h * g.w, 1),
                    );
                } else {
                    let dc = &mut d_col[..k * p];
                    gemm(
                        k,
                        g.cout,
                        p,
                        kernel.data(),
                        (1, k),
                        dy_band,
                        (plane_out, 1),
                        0.0,
                        dc,
                        (p, 1),
                    );
                    col2im(dc, &g, oy0, band, dx);
                }
            }
            oy0 += band;
        }
    }
    Ok(Conv2dGrads {
        input: if need_input {
            Some(Tensor::new(input.shape().to_vec(), d_input)?)
        } else {
            None
        },
        kernel: Tensor::new(kernel.shape().to_vec(), d_kernel)?,
        bias: Tensor::new(vec![g.cout], d_bias)?,
    })
}

/// Range of output columns `ox` whose input column `ox*stride + kx - pad`
/// falls inside `[0, w)`.
fn valid_cols(g: &Geom, kx: usize) -> (usize, usize) {
    let lo_num = g.pad_w.saturating_sub(kx);
    let lo = lo_num.div_ceil(g.stride);
    // ox*stride + kx - pad <= w - 1
    let hi = if g.w + g.pad_w < kx + 1 {
        0
    } else {
        ((g.w + g.pad_w - kx - 1) / g.stride + 1).min(g.wo)
    };
    (lo.min(hi), hi)
}

fn im2col(x: &[f64], g: &Geom, oy0: usize, band: usize, col: &mut [f64]) {
    let p = band * g.wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[r * p..(r + 1) * p];
                let (lo, hi) = valid_cols(g, kx);
                for by in 0..band {
                    let oy = oy0 + by;
                    let row = &mut dst[by * g.wo..(by + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    row[..lo].fill(0.0);
                    row[hi..].fill(0.0);
                    if g.stride == 1 {
                        let ix0 = lo + kx - g.pad_w;
                        row[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (ox, v) in row.iter_mut().enumerate().take(hi).skip(lo) {
                            *v = src[ox * g.stride + kx - g.pad_w];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &Geom, oy0: usize, band: usize, dx: &mut [f64]) {
    let p = band * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (c * g.kh + ky) * g.kw + kx;
                let src = &col[r * p..(r + 1) * p];
                let (lo, hi) = valid_cols(g, kx);
                if lo >= hi {
                    continue;
                }
                for by in 0..band {
                    let oy = oy0 + by;
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row = &src[by * g.wo..(by + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in lo..hi {
                        dst[ox * g.stride + kx - g.pad_w] += row[ox];
                    }
                }
            }
        }
    }
}

/// `C = A * B + beta * C` on strided row-major views (alpha fixed at 1).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, q: usize| (r - 1) * rs + (q - 1) * cs;
    assert!(k == 0 || last(rsa, csa, m, k) < a.len());
    assert!(k == 0 || last(rsb, csb, k, n) < b.len());
    assert!(last(rsc, csc, m, n) < c.len());
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
