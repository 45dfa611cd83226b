use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use lumenseg::data::{list_images, normalize, read_gray8, resize_image, write_mask_png, ResizeMode, SCANS};
use lumenseg::metrics::binarize;
use lumenseg::train::load_model;
use lumenseg::Error;

use super::Outcome;

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    /// Weights written by `train` (best.ckpt)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Directory of PNG/PGM scans, or a dataset root with a scans/ directory
    #[arg(long, value_name = "DIR")]
    pub images: PathBuf,

    /// Where the predicted masks go, one PNG per scan with the same stem
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Probability at or above which a pixel is foreground
    #[arg(long, default_value_t = lumenseg::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,

    /// Expected model input size; rejects a checkpoint built for another size
    #[arg(long, value_name = "PX")]
    pub input_size: Option<usize>,

    /// Accepted for uniformity with the other commands; prediction draws no
    /// random numbers
    #[arg(long)]
    pub seed: Option<u64>,
}

fn scan_dir(images: &Path) -> PathBuf {
    let nested = images.join(SCANS);
    if nested.is_dir() {
        nested
    } else {
        images.to_path_buf()
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

pub fn run(args: PredictArgs) -> Result<Outcome> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1), got {}", args.threshold)).into());
    }
    let graph = load_model(&args.checkpoint)?;
    let size = graph.input.height;
    if let Some(want) = args.input_size {
        if want != size {
            return Err(Error::Config(format!(
                "{} holds a model for {size}x{size} inputs, not {want}x{want}",
                args.checkpoint.display()
            ))
            .into());
        }
    }
    let dir = scan_dir(&args.images);
    let files = list_images(&dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(dir.display().to_string()).into());
    }
    if same_dir(&dir, &args.out) {
        return Err(Error::Config("the output directory must differ from the input directory".into()).into());
    }
    std::fs::create_dir_all(&args.out)?;
    let start = Instant::now();
    for (stem, path) in &files {
        let t = Instant::now();
        let scan = resize_image(&normalize(&read_gray8(path)?), size, ResizeMode::Bilinear)?;
        let prob = graph.forward(&scan.to_tensor())?;
        let mask = binarize(&prob, args.threshold)?;
        write_mask_png(&args.out.join(format!("{stem}.png")), &mask)?;
        println!("{stem}: {:.1} ms", t.elapsed().as_secs_f64() * 1e3);
    }
    println!(
        "predicted {} masks in {:.2} s -> {}",
        files.len(),
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(Outcome::Done)
}
