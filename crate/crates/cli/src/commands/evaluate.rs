use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lumenseg::data::{list_images, read_mask, resize_mask_to, Target, LUMEN, MEDIA};
use lumenseg::metrics::evaluate_set;
use lumenseg::Error;

use super::Outcome;

#[derive(clap::Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of predicted masks
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,

    /// Directory of ground-truth masks, or a dataset root
    #[arg(long, value_name = "DIR")]
    pub truth: PathBuf,

    /// Which mask directory of a dataset root to compare against
    #[arg(long, default_value = "lumen")]
    pub target: Target,

    /// Per-image CSV; a `<name>_summary.txt` is written beside it
    #[arg(long, value_name = "FILE", default_value = "evaluation.csv")]
    pub out: PathBuf,

    /// Accepted for uniformity with the other commands; evaluation draws no
    /// random numbers
    #[arg(long)]
    pub seed: Option<u64>,
}

fn truth_dir(truth: &Path, target: Target) -> PathBuf {
    let nested = truth.join(match target {
        Target::Lumen => LUMEN,
        Target::Media => MEDIA,
    });
    if nested.is_dir() {
        nested
    } else {
        truth.to_path_buf()
    }
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("evaluation");
    out.with_file_name(format!("{stem}_summary.txt"))
}

fn inside(file: &Path, dir: &Path) -> bool {
    let parent = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    match (parent.canonicalize(), dir.canonicalize()) {
        (Ok(p), Ok(d)) => p.starts_with(d),
        _ => false,
    }
}

pub fn run(args: EvaluateArgs) -> Result<Outcome> {
    let truth_dir = truth_dir(&args.truth, args.target);
    let preds = list_images(&args.pred)?;
    let truths = list_images(&truth_dir)?;
    for dir in [&args.pred, &truth_dir] {
        if inside(&args.out, dir) {
            return Err(Error::Config(format!("refusing to write the report inside input directory {}", dir.display())).into());
        }
    }
    let missing_pred: Vec<&String> = truths.keys().filter(|k| !preds.contains_key(*k)).collect();
    let missing_truth: Vec<&String> = preds.keys().filter(|k| !truths.contains_key(*k)).collect();
    let matched: BTreeMap<&String, (&PathBuf, &PathBuf)> = preds
        .iter()
        .filter_map(|(k, p)| truths.get(k).map(|t| (k, (p, t))))
        .collect();
    if matched.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no stem appears in both {} and {}",
            args.pred.display(),
            truth_dir.display()
        ))
        .into());
    }
    let mut triples = Vec::with_capacity(matched.len());
    for (stem, (p, t)) in matched {
        let pred = read_mask(p)?;
        let truth = read_mask(t)?;
        let (h, w) = pred.dims();
        triples.push((stem.clone(), pred, resize_mask_to(&truth, h, w)));
    }
    let report = evaluate_set(&triples)?;

    let mut summary = report.summary_text();
    if !missing_pred.is_empty() || !missing_truth.is_empty() {
        summary.push_str("\nunmatched (excluded from averages):\n");
        for id in &missing_pred {
            let _ = writeln!(summary, "  {id}: no prediction");
        }
        for id in &missing_truth {
            let _ = writeln!(summary, "  {id}: no ground truth");
        }
    }
    let csv = report.to_csv();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;
    let sp = summary_path(&args.out);
    std::fs::write(&sp, &summary).with_context(|| format!("writing {}", sp.display()))?;
    print!("{csv}\n{summary}");
    if missing_pred.is_empty() && missing_truth.is_empty() {
        Ok(Outcome::Done)
    } else {
        eprintln!(
            "warning: {} unmatched file(s), see {}",
            missing_pred.len() + missing_truth.len(),
            sp.display()
        );
        Ok(Outcome::Warning)
    }
}
