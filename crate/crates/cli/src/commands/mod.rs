pub mod evaluate;
pub mod predict;
pub mod preview;
pub mod summary;
pub mod train;

use std::path::PathBuf;

use crate::config::{parse_set, KeyFlags, Settings};

/// How a command that did not fail ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Finished, but with something the user should look at.
    Warning,
}

/// Config file plus per-key overrides, shared by the commands that build a
/// model or read a dataset.
#[derive(clap::Args, Debug)]
pub struct SettingsArgs {
    /// Configuration file (sections of `key = value` lines)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override any key as `section.key=value`; repeatable, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(flatten)]
    pub keys: KeyFlags,
}

impl SettingsArgs {
    pub fn resolve(&self) -> lumenseg::Result<Settings> {
        let mut overrides = self.keys.0.clone();
        overrides.extend(parse_set(&self.set)?);
        Settings::resolve(self.config.as_deref(), &overrides)
    }
}
