use std::path::PathBuf;

use anyhow::{Context, Result};
use lumenseg::model::skeleton;

use super::{Outcome, SettingsArgs};

#[derive(clap::Args, Debug)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub settings: SettingsArgs,

    /// Also write the table as CSV
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

pub fn run(args: SummaryArgs) -> Result<Outcome> {
    let settings = args.settings.resolve()?;
    let arch = settings.train.arch_config();
    arch.validate()?;
    let graph = skeleton(&arch)?;
    let summary = graph.summary();
    println!("{summary}");
    println!("kernel size: {}, input: {}x{}", arch.kernel_size, arch.input_size, arch.input_size);
    if let Some(path) = args.csv {
        std::fs::write(&path, summary.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(Outcome::Done)
}
