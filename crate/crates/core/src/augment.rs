//! Geometric augmentation shared by a scan and its two masks.
//!
//! Five transforms: horizontal flip, vertical flip, width shift, height
//! shift, rotation. They are applied in the fixed order flip -> shift ->
//! rotate. Scans are resampled bilinearly, masks by nearest neighbour, and
//! everything that falls outside the source takes the fill value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GrayImage, Sample};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// Native scan width the 30-pixel shift budget refers to.
pub const NATIVE_SIZE: f64 = 384.0;
pub const SHIFT_PIXELS: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub width_shift: bool,
    pub height_shift: bool,
    pub rotation: bool,
    /// Maximum shift as a fraction of the current width.
    pub shift_fraction_x: f64,
    pub shift_fraction_y: f64,
    /// Degrees, counter-clockwise.
    pub rotation_range: (f64, f64),
    pub fill: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            width_shift: true,
            height_shift: true,
            rotation: true,
            shift_fraction_x: SHIFT_PIXELS / NATIVE_SIZE,
            shift_fraction_y: SHIFT_PIXELS / NATIVE_SIZE,
            rotation_range: (0.0, 90.0),
            fill: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            hflip: false,
            vflip: false,
            width_shift: false,
            height_shift: false,
            rotation: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in [self.shift_fraction_x, self.shift_fraction_y] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("shift fraction {f} not in [0, 1)")));
            }
        }
        let (lo, hi) = self.rotation_range;
        if !(0.0..360.0).contains(&lo) || !(0.0..360.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "rotation range ({lo}, {hi}) must be ordered and within [0, 360)"
            )));
        }
        Ok(())
    }

    /// Largest `|dx|` allowed for an image of the given width.
    pub fn max_shift_x(&self, width: usize) -> i64 {
        (self.shift_fraction_x * width as f64).floor() as i64
    }

    pub fn max_shift_y(&self, height: usize) -> i64 {
        (self.shift_fraction_y * height as f64).floor() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomTransform {
    /// Mirror columns (left <-> right).
    pub hflip: bool,
    /// Mirror rows (top <-> bottom).
    pub vflip: bool,
    /// Content moves right by `dx` and down by `dy` pixels.
    pub dx: i64,
    pub dy: i64,
    /// Counter-clockwise, degrees.
    pub angle: f64,
}

impl GeomTransform {
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            dx: 0,
            dy: 0,
            angle: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// Draws a transform for an image of `height x width`. The same number of
/// random values is consumed whatever the enable flags are.
pub fn sample_transform<R: Rng + ?Sized>(
    cfg: &AugmentConfig,
    height: usize,
    width: usize,
    rng: &mut R,
) -> GeomTransform {
    let hflip = rng.random_bool(0.5);
    let vflip = rng.random_bool(0.5);
    let mx = cfg.max_shift_x(width);
    let my = cfg.max_shift_y(height);
    let dx = rng.random_range(-mx..=mx);
    let dy = rng.random_range(-my..=my);
    let (lo, hi) = cfg.rotation_range;
    let angle = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    GeomTransform {
        hflip: cfg.hflip && hflip,
        vflip: cfg.vflip && vflip,
        dx: if cfg.width_shift { dx } else { 0 },
        dy: if cfg.height_shift { dy } else { 0 },
        angle: if cfg.rotation { angle } else { 0.0 },
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Interp {
    Bilinear,
    Nearest,
}

fn flip(src: &[f64], h: usize, w: usize, hflip: bool, vflip: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = if vflip { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if hflip { w - 1 - x } else { x };
            out.push(src[sy * w + sx]);
        }
    }
    out
}

fn shift(src: &[f64], h: usize, w: usize, dx: i64, dy: i64, fill: f64) -> Vec<f64> {
    let mut out = vec![fill; h * w];
    for y in 0..h as i64 {
        let sy = y - dy;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w as i64 {
            let sx = x - dx;
            if sx >= 0 && sx < w as i64 {
                out[(y as usize) * w + x as usize] = src[sy as usize * w + sx as usize];
            }
        }
    }
    out
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn rotate(src: &[f64], h: usize, w: usize, angle_deg: f64, fill: f64, interp: Interp) -> Vec<f64> {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (hm, wm) = ((h - 1) as f64, (w - 1) as f64);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let v = y as f64 - cy;
        for x in 0..w {
            let u = x as f64 - cx;
            // inverse map: output pixel samples the source rotated back
            let xs = snap(cx + u * cos - v * sin);
            let ys = snap(cy + u * sin + v * cos);
            let val = match interp {
                Interp::Nearest => {
                    let (xi, yi) = ((xs + 0.5).floor(), (ys + 0.5).floor());
                    if xi < 0.0 || yi < 0.0 || xi > wm || yi > hm {
                        fill
                    } else {
                        src[yi as usize * w + xi as usize]
                    }
                }
                Interp::Bilinear => {
                    if xs < 0.0 || ys < 0.0 || xs > wm || ys > hm {
                        fill
                    } else {
                        let (x0, y0) = (xs.floor() as usize, ys.floor() as usize);
                        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                        let (fx, fy) = (xs - x0 as f64, ys - y0 as f64);
                        let top = if fx == 0.0 {
                            src[y0 * w + x0]
                        } else {
                            src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx
                        };
                        if fy == 0.0 {
                            top
                        } else {
                            let bot = if fx == 0.0 {
                                src[y1 * w + x0]
                            } else {
                                src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx
                            };
                            top * (1.0 - fy) + bot * fy
                        }
                    }
                }
            };
            out.push(val);
        }
    }
    out
}

fn apply_plane(t: &GeomTransform, src: &[f64], h: usize, w: usize, fill: f64, interp: Interp) -> Vec<f64> {
    if h == 0 || w == 0 {
        return src.to_vec();
    }
    let mut p = if t.hflip || t.vflip {
        flip(src, h, w, t.hflip, t.vflip)
    } else {
        src.to_vec()
    };
    if t.dx != 0 || t.dy != 0 {
        p = shift(&p, h, w, t.dx, t.dy, fill);
    }
    if t.angle != 0.0 {
        p = rotate(&p, h, w, t.angle, fill, interp);
    }
    p
}

/// Bilinear resampling; out-of-support pixels take `fill`.
pub fn apply_to_image(t: &GeomTransform, img: &GrayImage, fill: f64) -> GrayImage {
    let (h, w) = img.dims();
    let data = apply_plane(t, img.data(), h, w, fill, Interp::Bilinear);
    GrayImage::from_unit(h, w, data.iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .expect("dims unchanged")
}

/// Nearest-neighbour resampling with zero fill, so the output stays binary.
pub fn apply_to_mask(t: &GeomTransform, mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let src: Vec<f64> = mask.bits().iter().map(|&b| b as f64).collect();
    let data = apply_plane(t, &src, h, w, 0.0, Interp::Nearest);
    BinaryMask::new(h, w, data.iter().map(|&v| (v >= 0.5) as u8).collect())
        .expect("nearest resampling keeps values binary")
}

/// Draws one transform and applies it to the scan and both masks.
pub fn augment_sample<R: Rng + ?Sized>(
    s: &Sample,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Sample, GeomTransform) {
    let (h, w) = s.scan.dims();
    let t = sample_transform(cfg, h, w, rng);
    if t.is_identity() {
        return (s.clone(), t);
    }
    let out = Sample {
        id: s.id.clone(),
        scan: apply_to_image(&t, &s.scan, cfg.fill),
        lumen: apply_to_mask(&t, &s.lumen),
        media: apply_to_mask(&t, &s.media),
    };
    (out, t)
}
