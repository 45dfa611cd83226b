//! Synthetic vessel cross-sections: a dark lumen disk inside a bright media
//! ring on mid-grey tissue, with additive noise. Pixel values are quantized
//! to 8-bit levels so the images survive a PNG round trip unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, DatasetIndex, GrayImage, Role, Sample};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

const LUMEN_LEVEL: f64 = 0.12;
const MEDIA_LEVEL: f64 = 0.80;
const TISSUE_LEVEL: f64 = 0.45;
const NOISE: f64 = 0.10;

pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<DatasetIndex> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Divisibility {
            height: size,
            width: size,
            required: 32,
        });
    }
    let samples = (0..n)
        .map(|i| synth_sample(i, size, derive_seed(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    DatasetIndex::in_memory(samples, Role::Train)
}

fn synth_sample(i: usize, size: usize, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let cy = s / 2.0 + rng.random_range(-s / 8.0..s / 8.0);
    let cx = s / 2.0 + rng.random_range(-s / 8.0..s / 8.0);
    // lumen covers roughly 2-9% of the image
    let r_lumen = s * rng.random_range(0.08..0.17);
    let r_media = r_lumen + s * rng.random_range(0.06..0.12);
    let dist2 = |y: usize, x: usize| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
    let lumen = BinaryMask::from_fn(size, size, |y, x| dist2(y, x) <= r_lumen * r_lumen);
    let media = BinaryMask::from_fn(size, size, |y, x| dist2(y, x) <= r_media * r_media);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let base = if lumen.get(y, x) {
                LUMEN_LEVEL
            } else if media.get(y, x) {
                MEDIA_LEVEL
            } else {
                TISSUE_LEVEL
            };
            let v = (base + rng.random_range(-NOISE..NOISE)).clamp(0.0, 1.0);
            data.push((v * 255.0).round() / 255.0);
        }
    }
    Sample::new(
        format!("synth_{i:04}"),
        GrayImage::from_parts(size, size, data),
        lumen,
        media,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lumen_inside_media() {
        let idx = synth_dataset(12, 64, 3).unwrap();
        for s in idx.load_all().unwrap() {
            assert!(s.lumen.count() < s.media.count());
            for (l, m) in s.lumen.bits().iter().zip(s.media.bits()) {
                assert!(l <= m);
            }
        }
    }

    #[test]
    fn seeded() {
        let a = synth_dataset(4, 32, 9).unwrap().load_all().unwrap();
        let b = synth_dataset(4, 32, 9).unwrap().load_all().unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(4, 32, 10).unwrap().load_all().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lumen_fraction_in_range() {
        let idx = synth_dataset(50, 64, 1).unwrap();
        let samples = idx.load_all().unwrap();
        let mean = samples
            .iter()
            .map(|s| s.lumen.count() as f64 / (64.0 * 64.0))
            .sum::<f64>()
            / samples.len() as f64;
        assert!((0.02..=0.10).contains(&mean), "{mean}");
    }

    #[test]
    fn values_are_8bit_levels() {
        let s = synth_dataset(1, 32, 0).unwrap().get(0).unwrap();
        assert!(s.scan.data().iter().all(|&v| ((v * 255.0).round() / 255.0) == v));
    }

    #[test]
    fn size_must_divide() {
        assert!(synth_dataset(1, 40, 0).is_err());
    }
}
