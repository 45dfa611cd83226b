use std::path::PathBuf;

use anyhow::{Context, Result};
use lumenseg::train::{Trainer, LAST_CKPT};
use lumenseg::Error;

use super::{Outcome, SettingsArgs};
use crate::config::{Settings, DEFAULT_RUN_ROOT, RUN_ROOT_ENV};
use crate::manifest::{write_split, RunManifest};

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,

    /// Continue from last.ckpt when the run directory already holds one
    #[arg(long)]
    pub resume: bool,

    /// Print the manifest that would be written and exit
    #[arg(long)]
    pub dry_run: bool,
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
}

/// One manifest per model; `--target both` trains lumen then media in
/// subdirectories of the run directory.
fn plan(settings: &Settings) -> Vec<RunManifest> {
    let dir = settings.run_dir_under(&run_root());
    let targets = settings.target.targets();
    let split = targets.len() > 1;
    targets
        .into_iter()
        .map(|t| {
            let d = if split { dir.join(t.name()) } else { dir.clone() };
            RunManifest::new(settings.for_target(t, d.clone()), d)
        })
        .collect()
}

pub fn run(args: TrainArgs) -> Result<Outcome> {
    let settings = args.settings.resolve()?;
    settings.validate()?;
    let runs = plan(&settings);
    if args.dry_run {
        for m in &runs {
            print!("{}", m.to_text());
        }
        return Ok(Outcome::Done);
    }
    let data = settings.load_data()?;
    println!("{} samples", data.len());
    for m in runs {
        let cfg = m.settings.train.clone();
        let last = m.run_dir.join(LAST_CKPT);
        let mut trainer = if args.resume && last.is_file() {
            let t = Trainer::resume(&last, &data)?;
            if t.config() != &cfg {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    last.display()
                ))
                .into());
            }
            println!("resuming {} after epoch {}", m.run_dir.display(), t.log().len());
            t
        } else {
            Trainer::new(cfg, &data)?.with_run_dir(&m.run_dir)?
        };
        let manifest = m
            .write()
            .with_context(|| format!("writing manifest in {}", m.run_dir.display()))?;
        write_split(&m.run_dir, trainer.train_ids(), trainer.val_ids())?;
        println!(
            "{} model: {} train / {} val, manifest {}",
            m.settings.train.target.name(),
            trainer.train_ids().len(),
            trainer.val_ids().len(),
            manifest.display()
        );
        let total = m.settings.train.epochs;
        trainer.run(|r| {
            println!(
                "epoch {:>3}/{total}  loss {:.5}  dice {:.4}  val_loss {:.5}  val_dice {:.4}  lr {}",
                r.epoch, r.train_loss, r.train_dice, r.val_loss, r.val_dice, r.lr
            )
        })?;
        let out = trainer.finish()?;
        println!(
            "best epoch {} (val_loss {:.5}), artifacts in {}",
            out.best_epoch,
            out.best_val_loss,
            m.run_dir.display()
        );
    }
    Ok(Outcome::Done)
}
