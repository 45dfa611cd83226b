use std::path::PathBuf;

use anyhow::Result;
use lumenseg::augment::augment_sample;
use lumenseg::data::{derive_seed, write_gray_png, GrayImage, Sample};
use lumenseg::metrics::BinaryMask;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Outcome, SettingsArgs};

#[derive(clap::Args, Debug)]
pub struct PreviewArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,

    /// Number of samples to augment; each gives a before and an after panel
    #[arg(long, short = 'n', default_value_t = 4)]
    pub count: usize,

    /// Output directory for the panels
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

fn mask_levels(m: &BinaryMask) -> impl Iterator<Item = f64> + '_ {
    m.bits().iter().map(|&b| b as f64)
}

/// Scan, lumen and media side by side.
fn panel(s: &Sample) -> GrayImage {
    let (h, w) = s.scan.dims();
    let mut data = Vec::with_capacity(h * w * 3);
    let lumen: Vec<f64> = mask_levels(&s.lumen).collect();
    let media: Vec<f64> = mask_levels(&s.media).collect();
    for y in 0..h {
        let row = y * w..(y + 1) * w;
        data.extend_from_slice(&s.scan.data()[row.clone()]);
        data.extend_from_slice(&lumen[row.clone()]);
        data.extend_from_slice(&media[row]);
    }
    GrayImage::from_unit(h, 3 * w, data).expect("scan and mask levels lie in [0, 1]")
}

pub fn run(args: PreviewArgs) -> Result<Outcome> {
    let settings = args.settings.resolve()?;
    settings.validate()?;
    if args.count == 0 {
        println!("nothing to preview");
        return Ok(Outcome::Done);
    }
    let data = settings.load_data()?;
    let cfg = &settings.train.augmentation;
    std::fs::create_dir_all(&args.out)?;
    for i in 0..args.count {
        let sample = data.get(i % data.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.train.seed, &[i as u64]));
        let (after, t) = augment_sample(&sample, cfg, &mut rng);
        for (tag, s) in [("before", &sample), ("after", &after)] {
            write_gray_png(&args.out.join(format!("{i:04}_{}_{tag}.png", sample.id)), &panel(s))?;
        }
        println!(
            "{i:04} {}: hflip {} vflip {} shift ({}, {}) rotation {:.2}",
            sample.id, t.hflip, t.vflip, t.dx, t.dy, t.angle
        );
    }
    println!("wrote {} panels to {}", 2 * args.count, args.out.display());
    Ok(Outcome::Done)
}
