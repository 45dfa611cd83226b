use super::{GrayImage, Sample};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    /// Half-pixel-centre bilinear interpolation.
    Bilinear,
    /// Source index `floor(dst * in / out)`.
    Nearest,
}

fn check_target(target: usize) -> Result<()> {
    if target < 32 || target % 32 != 0 {
        return Err(Error::Divisibility {
            height: target,
            width: target,
            required: 32,
        });
    }
    Ok(())
}

fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    dst * src_len / dst_len
}

fn resample(src: &[f64], h: usize, w: usize, target: usize, mode: ResizeMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(target * target);
    match mode {
        ResizeMode::Nearest => {
            for y in 0..target {
                let sy = nearest_index(y, h, target);
                for x in 0..target {
                    out.push(src[sy * w + nearest_index(x, w, target)]);
                }
            }
        }
        ResizeMode::Bilinear => {
            let coord = |d: usize, n: usize| -> (usize, usize, f64) {
                let s = ((d as f64 + 0.5) * n as f64 / target as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, s - i0 as f64)
            };
            let cols: Vec<_> = (0..target).map(|x| coord(x, w)).collect();
            for y in 0..target {
                let (y0, y1, fy) = coord(y, h);
                for &(x0, x1, fx) in &cols {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    out
}

/// Resizes to `target x target`; the target must be a multiple of 32.
pub fn resize_image(img: &GrayImage, target: usize, mode: ResizeMode) -> Result<GrayImage> {
    check_target(target)?;
    if img.dims() == (target, target) {
        return Ok(img.clone());
    }
    let data = resample(img.data(), img.height(), img.width(), target, mode);
    Ok(GrayImage::from_parts(target, target, data))
}

/// Nearest-neighbour mask resize; output stays binary.
pub fn resize_mask(mask: &BinaryMask, target: usize) -> Result<BinaryMask> {
    check_target(target)?;
    if mask.dims() == (target, target) {
        return Ok(mask.clone());
    }
    Ok(resize_mask_to(mask, target, target))
}

/// Nearest-neighbour mask resize to arbitrary dimensions.
pub fn resize_mask_to(mask: &BinaryMask, height: usize, width: usize) -> BinaryMask {
    if mask.dims() == (height, width) {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    BinaryMask::from_fn(height, width, |y, x| {
        mask.get(nearest_index(y, h, height), nearest_index(x, w, width))
    })
}

/// Bilinear scan, nearest masks.
pub fn resize_sample(s: &Sample, target: usize) -> Result<Sample> {
    Sample::new(
        s.id.clone(),
        resize_image(&s.scan, target, ResizeMode::Bilinear)?,
        resize_mask(&s.lumen, target)?,
        resize_mask(&s.media, target)?,
    )
}
