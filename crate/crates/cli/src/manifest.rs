use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lumenseg::train::{BEST_CKPT, LAST_CKPT, LOG_CSV};

use crate::config::Settings;

pub const MANIFEST_FILE: &str = "manifest.ini";
pub const SPLIT_FILE: &str = "split.csv";

/// Everything needed to rerun a training run: the fully resolved settings
/// plus where its outputs go. Readable back as a config file.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub settings: Settings,
    pub run_dir: PathBuf,
}

impl RunManifest {
    pub fn new(settings: Settings, run_dir: PathBuf) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            settings,
            run_dir,
        }
    }

    pub fn artifacts(&self) -> [(&'static str, PathBuf); 5] {
        let d = &self.run_dir;
        [
            ("manifest", d.join(MANIFEST_FILE)),
            ("best_checkpoint", d.join(BEST_CKPT)),
            ("last_checkpoint", d.join(LAST_CKPT)),
            ("log", d.join(LOG_CSV)),
            ("split", d.join(SPLIT_FILE)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[run]\n");
        let _ = writeln!(out, "tool_version = {}", self.tool_version);
        let _ = writeln!(out, "seed = {}", self.settings.train.seed);
        for (name, path) in self.artifacts() {
            let _ = writeln!(out, "{name} = {}", path.display());
        }
        out.push('\n');
        out.push_str(&self.settings.to_text());
        out
    }

    pub fn write(&self) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(&self.run_dir)?;
        let path = self.run_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

pub fn write_split(dir: &Path, train: &[String], val: &[String]) -> std::io::Result<()> {
    let mut out = String::from("id,role\n");
    for (ids, role) in [(train, "train"), (val, "val")] {
        for id in ids {
            let _ = writeln!(out, "{id},{role}");
        }
    }
    std::fs::write(dir.join(SPLIT_FILE), out)
}
