//! Scans, masks, dataset indexing and splitting.

mod io;
mod resize;
mod synth;

pub use io::{
    list_images, load_dataset, read_gray8, read_mask, write_dataset, write_gray_png, write_mask_png,
    LUMEN, MASK_THRESHOLD, MEDIA, SCANS,
};
pub use resize::{resize_image, resize_mask, resize_mask_to, resize_sample, ResizeMode};
pub use synth::synth_dataset;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

/// Raw 8-bit grayscale pixels as read from disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Grayscale image with values in `[0, 1]`. Only obtainable through
/// [`normalize`] or the augmentation and resize routines, so raw 8-bit data
/// can never be normalized twice.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image from already-normalized values, rejecting anything
    /// outside `[0, 1]`.
    pub fn from_unit(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DataLength {
                shape: vec![height, width],
                expected: height * width,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("normalized image values must lie in [0, 1]".into()));
        }
        Ok(Self::from_parts(height, width, data))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Back to 8-bit, rounding to the nearest level.
    pub fn to_raw(&self) -> RawImage {
        RawImage {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }

    /// `[1, 1, H, W]` network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.height, self.width], self.data.clone())
            .expect("image dims are consistent")
    }
}

/// Maps 8-bit levels onto `[0, 1]` by dividing by 255.
pub fn normalize(raw: &RawImage) -> GrayImage {
    GrayImage::from_parts(
        raw.height,
        raw.width,
        raw.data.iter().map(|&v| v as f64 / 255.0).collect(),
    )
}

/// Binarizes an 8-bit mask: foreground iff the level is at least `threshold`.
pub fn mask_from_raw(raw: &RawImage, threshold: u8) -> BinaryMask {
    BinaryMask::new(
        raw.height,
        raw.width,
        raw.data.iter().map(|&v| (v >= threshold) as u8).collect(),
    )
    .expect("dims match and values are binary")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Lumen,
    Media,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Lumen => "lumen",
            Target::Media => "media",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lumen" => Ok(Target::Lumen),
            "media" => Ok(Target::Media),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

/// One scan with its two label masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub scan: GrayImage,
    pub lumen: BinaryMask,
    pub media: BinaryMask,
}

impl Sample {
    pub fn new(id: String, scan: GrayImage, lumen: BinaryMask, media: BinaryMask) -> Result<Self> {
        for (what, m) in [("lumen mask", &lumen), ("media mask", &media)] {
            if m.dims() != scan.dims() {
                return Err(Error::SampleDims {
                    id,
                    what,
                    found_h: m.height(),
                    found_w: m.width(),
                    scan_h: scan.height(),
                    scan_w: scan.width(),
                });
            }
        }
        Ok(Self {
            id,
            scan,
            lumen,
            media,
        })
    }

    pub fn mask(&self, target: Target) -> &BinaryMask {
        match target {
            Target::Lumen => &self.lumen,
            Target::Media => &self.media,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// Ordered, validated list of samples, either backed by a directory (loaded
/// lazily) or held in memory.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: Option<PathBuf>,
    pub role: Role,
    ids: Vec<String>,
    memory: Option<Vec<Sample>>,
}

impl DatasetIndex {
    pub fn in_memory(samples: Vec<Sample>, role: Role) -> Result<Self> {
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        check_unique(&ids)?;
        Ok(Self {
            root: None,
            role,
            ids,
            memory: Some(samples),
        })
    }

    pub(crate) fn on_disk(root: PathBuf, ids: Vec<String>, role: Role) -> Self {
        Self {
            root: Some(root),
            role,
            ids,
            memory: None,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<Sample> {
        match (&self.memory, &self.root) {
            (Some(samples), _) => Ok(samples[i].clone()),
            (None, Some(root)) => io::load_sample(root, &self.ids[i]),
            (None, None) => unreachable!("index has neither memory nor root"),
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    /// Samples for the given ids, in the given order.
    pub fn load_ids(&self, ids: &[String]) -> Result<Vec<Sample>> {
        ids.iter()
            .map(|id| {
                let i = self
                    .position(id)
                    .ok_or_else(|| Error::Config(format!("unknown sample id `{id}`")))?;
                self.get(i)
            })
            .collect()
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Config(format!("duplicate sample id `{id}`")));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Seeded shuffle, then the first `floor(fraction * n)` ids train and the
/// rest validate.
pub fn split(index: &DatasetIndex, cfg: &SplitConfig) -> Result<(Vec<String>, Vec<String>)> {
    let n = index.len();
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} sample(s)")));
    }
    let n_train = (cfg.train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "train fraction {} leaves an empty side for {n} samples",
            cfg.train_fraction
        )));
    }
    let mut ids = index.ids().to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let val = ids.split_off(n_train);
    Ok((ids, val))
}

/// Mixes a base seed with stream indices (SplitMix64 finalizer) so derived
/// streams are independent of processing order.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
