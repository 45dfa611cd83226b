//! Run configuration as a sectioned `key = value` text file.
//!
//! Every key can also be set with a `--<flag>` option or `--set key=value`.
//! Resolution order: preset, then the file, then flags, then `--set`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use lumenseg::augment::AugmentConfig;
use lumenseg::data::{load_dataset, synth_dataset, DatasetIndex, Target};
use lumenseg::model::Architecture;
use lumenseg::train::{OptimizerKind, PlateauConfig, Preset, TrainConfig};
use lumenseg::{Error, Result};

pub const RUN_ROOT_ENV: &str = "LUMENSEG_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";

/// Sections that may appear in a file but carry no settings.
const PASSIVE_SECTIONS: [&str; 1] = ["run"];

pub struct Key {
    pub section: &'static str,
    pub name: &'static str,
    pub flag: &'static str,
    pub value: &'static str,
    pub help: &'static str,
}

const fn key(section: &'static str, name: &'static str, flag: &'static str, value: &'static str, help: &'static str) -> Key {
    Key {
        section,
        name,
        flag,
        value,
        help,
    }
}

pub const KEYS: &[Key] = &[
    key("model", "architecture", "architecture", "NAME", "vgg16-unet or simple-unet"),
    key("model", "kernel_size", "kernel-size", "K", "Odd conv kernel size"),
    key("model", "base_filters", "base-filters", "N", "Width of the first level"),
    key("model", "input_size", "input-size", "PX", "Square input side, a multiple of 32"),
    key("train", "preset", "preset", "NAME", "exp1, exp2, exp3 or custom"),
    key("train", "epochs", "epochs", "N", "Number of epochs"),
    key("train", "batch_size", "batch-size", "N", "Mini-batch size"),
    key("train", "optimizer", "optimizer", "NAME", "sgd or adam"),
    key("train", "learning_rate", "learning-rate", "LR", "Initial learning rate"),
    key("train", "adam_beta1", "adam-beta1", "B", "Adam first-moment decay"),
    key("train", "adam_beta2", "adam-beta2", "B", "Adam second-moment decay"),
    key("train", "adam_epsilon", "adam-epsilon", "E", "Adam denominator epsilon"),
    key("train", "split_fraction", "split-fraction", "F", "Fraction of samples used for training"),
    key("train", "seed", "seed", "N", "Seed for init, split, shuffling and augmentation"),
    key("train", "smooth", "smooth", "S", "Soft Dice smoothing constant"),
    key("train", "clip_norm", "clip-norm", "N|none", "Global gradient-norm clip"),
    key("train", "stop_at_train_dice", "stop-at-train-dice", "D|none", "Stop once training Dice reaches D"),
    key("schedule", "plateau", "plateau", "BOOL", "Reduce the learning rate on a validation plateau"),
    key("schedule", "patience", "patience", "N", "Epochs without improvement before a reduction"),
    key("schedule", "factor", "factor", "F", "Learning-rate multiplier per reduction"),
    key("schedule", "min_delta", "min-delta", "D", "Smallest decrease that counts as improvement"),
    key("augment", "enabled", "augment", "BOOL", "Apply random augmentation to training samples"),
    key("augment", "hflip", "hflip", "BOOL", "Random left/right flip"),
    key("augment", "vflip", "vflip", "BOOL", "Random up/down flip"),
    key("augment", "width_shift", "width-shift", "BOOL", "Random horizontal shift"),
    key("augment", "height_shift", "height-shift", "BOOL", "Random vertical shift"),
    key("augment", "rotation", "rotation", "BOOL", "Random rotation"),
    key("augment", "shift_fraction_x", "shift-fraction-x", "F", "Largest horizontal shift as a fraction of width"),
    key("augment", "shift_fraction_y", "shift-fraction-y", "F", "Largest vertical shift as a fraction of height"),
    key("augment", "rotation_min", "rotation-min", "DEG", "Smallest rotation angle"),
    key("augment", "rotation_max", "rotation-max", "DEG", "Largest rotation angle"),
    key("augment", "fill", "fill", "V", "Scan value outside the source image"),
    key("data", "target", "target", "NAME", "lumen, media or both"),
    key("data", "root", "data", "DIR", "Dataset root with scans/, masks_lumen/ and masks_media/"),
    key("data", "synthetic", "synthetic", "N", "Use N generated samples instead of a dataset"),
    key("data", "synthetic_size", "synthetic-size", "PX", "Side of generated samples (0 = input size)"),
    key("data", "synthetic_seed", "synthetic-seed", "N", "Seed of the generated samples"),
    key("output", "run_dir", "run-dir", "DIR", "Run directory (default: $LUMENSEG_RUN_ROOT/<preset>-<target>-seed<seed>)"),
];

impl Key {
    pub fn id(&self) -> String {
        format!("{}.{}", self.section, self.name)
    }
}

/// Finds a key by `section.name`, bare name or flag spelling.
pub fn lookup(spec: &str) -> Result<&'static Key> {
    let spec = spec.trim();
    let found = match spec.split_once('.') {
        Some((section, name)) => KEYS.iter().find(|k| k.section == section && k.name == name),
        None => KEYS
            .iter()
            .find(|k| k.name == spec.replace('-', "_") || k.flag == spec),
    };
    found.ok_or_else(|| Error::Config(format!("unknown configuration key `{spec}`")))
}

/// Config keys given as command-line flags, in table order.
#[derive(Clone, Debug, Default)]
pub struct KeyFlags(pub Vec<(&'static Key, String)>);

impl std::fmt::Debug for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromArgMatches for KeyFlags {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        Ok(Self(
            KEYS.iter()
                .filter_map(|k| m.get_one::<String>(k.flag).map(|v| (k, v.clone())))
                .collect(),
        ))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for KeyFlags {
    fn augment_args(cmd: Command) -> Command {
        KEYS.iter().fold(cmd, |c, k| {
            c.arg(
                Arg::new(k.flag)
                    .long(k.flag)
                    .value_name(k.value)
                    .help(k.help)
                    .help_heading("Configuration keys")
                    .overrides_with(k.flag),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

/// Parses `--set key=value` entries.
pub fn parse_set(entries: &[String]) -> Result<Vec<(&'static Key, String)>> {
    entries
        .iter()
        .map(|e| {
            let (k, v) = e
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {e}` is not of the form key=value")))?;
            Ok((lookup(k)?, v.trim().to_string()))
        })
        .collect()
}

/// Reads `[section]` headers and `key = value` lines; `#` and `;` start
/// comments.
pub fn parse_file(text: &str, origin: &Path) -> Result<Vec<(&'static Key, String)>> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = || format!("{}:{}", origin.display(), n + 1);
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("{}: unterminated section header", at())))?
                .trim();
            let known = KEYS.iter().any(|k| k.section == name) || PASSIVE_SECTIONS.contains(&name);
            if !known {
                return Err(Error::Config(format!("{}: unknown section [{name}]", at())));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}: expected `key = value`", at())))?;
        let Some(sec) = &section else {
            return Err(Error::Config(format!("{}: key outside any section", at())));
        };
        if PASSIVE_SECTIONS.contains(&sec.as_str()) {
            continue;
        }
        let k = k.trim();
        let key = KEYS
            .iter()
            .find(|key| key.section == sec && key.name == k)
            .ok_or_else(|| Error::Config(format!("{}: unknown key `{k}` in [{sec}]", at())))?;
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetChoice {
    One(Target),
    Both,
}

impl TargetChoice {
    pub fn name(self) -> &'static str {
        match self {
            TargetChoice::One(t) => t.name(),
            TargetChoice::Both => "both",
        }
    }

    pub fn targets(self) -> Vec<Target> {
        match self {
            TargetChoice::One(t) => vec![t],
            TargetChoice::Both => vec![Target::Lumen, Target::Media],
        }
    }
}

impl FromStr for TargetChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(TargetChoice::Both),
            other => other.parse().map(TargetChoice::One),
        }
    }
}

/// Everything a command needs, with all defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub plateau_enabled: bool,
    pub plateau: PlateauConfig,
    pub target: TargetChoice,
    pub data_root: Option<PathBuf>,
    pub synthetic: usize,
    pub synthetic_size: usize,
    pub synthetic_seed: u64,
    pub run_dir: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &Key, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{}: cannot parse `{v}`", key.id())))
}

fn parse_bool(key: &Key, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{}: expected true or false, got `{v}`", key.id()))),
    }
}

fn parse_opt(key: &Key, v: &str) -> Result<Option<f64>> {
    match v.to_ascii_lowercase().as_str() {
        "none" | "off" => Ok(None),
        _ => parse(key, v).map(Some),
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl Settings {
    pub fn from_preset(preset: Preset) -> Self {
        let train = TrainConfig::preset(preset);
        Self {
            plateau_enabled: train.plateau.is_some(),
            plateau: train.plateau.unwrap_or_default(),
            target: TargetChoice::One(train.target),
            train,
            data_root: None,
            synthetic: 0,
            synthetic_size: 0,
            synthetic_seed: 0,
            run_dir: None,
        }
    }

    /// Applies preset, file entries and overrides in that order.
    pub fn resolve(file: Option<&Path>, overrides: &[(&'static Key, String)]) -> Result<Self> {
        let from_file = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                parse_file(&text, p)?
            }
            None => Vec::new(),
        };
        let all: Vec<_> = from_file.iter().chain(overrides).collect();
        let preset = match all.iter().rev().find(|(k, _)| k.name == "preset") {
            Some((k, v)) => parse(k, v)?,
            None => Preset::Exp3,
        };
        let mut s = Self::from_preset(preset);
        for (k, v) in all {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &Key, v: &str) -> Result<()> {
        let t = &mut self.train;
        let a = &mut t.augmentation;
        match (key.section, key.name) {
            ("model", "architecture") => t.architecture = parse::<Architecture>(key, v)?,
            ("model", "kernel_size") => t.kernel_size = parse(key, v)?,
            ("model", "base_filters") => t.base_filters = parse(key, v)?,
            ("model", "input_size") => t.input_size = parse(key, v)?,
            ("train", "preset") => t.preset = parse(key, v)?,
            ("train", "epochs") => t.epochs = parse(key, v)?,
            ("train", "batch_size") => t.batch_size = parse(key, v)?,
            ("train", "optimizer") => t.optimizer = parse::<OptimizerKind>(key, v)?,
            ("train", "learning_rate") => t.learning_rate = parse(key, v)?,
            ("train", "adam_beta1") => t.adam.beta1 = parse(key, v)?,
            ("train", "adam_beta2") => t.adam.beta2 = parse(key, v)?,
            ("train", "adam_epsilon") => t.adam.eps = parse(key, v)?,
            ("train", "split_fraction") => t.split_fraction = parse(key, v)?,
            ("train", "seed") => t.seed = parse(key, v)?,
            ("train", "smooth") => t.smooth = parse(key, v)?,
            ("train", "clip_norm") => t.clip_norm = parse_opt(key, v)?,
            ("train", "stop_at_train_dice") => t.stop_at_train_dice = parse_opt(key, v)?,
            ("schedule", "plateau") => self.plateau_enabled = parse_bool(key, v)?,
            ("schedule", "patience") => self.plateau.patience = parse(key, v)?,
            ("schedule", "factor") => self.plateau.factor = parse(key, v)?,
            ("schedule", "min_delta") => self.plateau.min_delta = parse(key, v)?,
            ("augment", "enabled") => t.augment = parse_bool(key, v)?,
            ("augment", "hflip") => a.hflip = parse_bool(key, v)?,
            ("augment", "vflip") => a.vflip = parse_bool(key, v)?,
            ("augment", "width_shift") => a.width_shift = parse_bool(key, v)?,
            ("augment", "height_shift") => a.height_shift = parse_bool(key, v)?,
            ("augment", "rotation") => a.rotation = parse_bool(key, v)?,
            ("augment", "shift_fraction_x") => a.shift_fraction_x = parse(key, v)?,
            ("augment", "shift_fraction_y") => a.shift_fraction_y = parse(key, v)?,
            ("augment", "rotation_min") => a.rotation_range.0 = parse(key, v)?,
            ("augment", "rotation_max") => a.rotation_range.1 = parse(key, v)?,
            ("augment", "fill") => a.fill = parse(key, v)?,
            ("data", "target") => self.target = parse(key, v)?,
            ("data", "root") => self.data_root = (!v.is_empty()).then(|| PathBuf::from(v)),
            ("data", "synthetic") => self.synthetic = parse(key, v)?,
            ("data", "synthetic_size") => self.synthetic_size = parse(key, v)?,
            ("data", "synthetic_seed") => self.synthetic_seed = parse(key, v)?,
            ("output", "run_dir") => self.run_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unhandled key {}", key.id()))),
        }
        if let TargetChoice::One(target) = self.target {
            self.train.target = target;
        }
        self.train.plateau = self.plateau_enabled.then_some(self.plateau);
        Ok(())
    }

    /// Model and training checks; data sources are checked by [`load_data`](Self::load_data).
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data_root.is_some() && self.synthetic > 0 {
            return Err(Error::Config("give either a dataset root or --synthetic, not both".into()));
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<DatasetIndex> {
        match (&self.data_root, self.synthetic) {
            (Some(root), _) => load_dataset(root),
            (None, 0) => Err(Error::Config("no data: pass --data DIR or --synthetic N".into())),
            (None, n) => {
                let size = if self.synthetic_size == 0 {
                    self.train.input_size
                } else {
                    self.synthetic_size
                };
                synth_dataset(n, size, self.synthetic_seed)
            }
        }
    }

    /// Settings for one of the models of a `both` run.
    pub fn for_target(&self, target: Target, run_dir: PathBuf) -> Self {
        let mut s = self.clone();
        s.target = TargetChoice::One(target);
        s.train.target = target;
        s.run_dir = Some(run_dir);
        s
    }

    /// Explicit run directory, or one derived from preset, target and seed
    /// under `root`.
    pub fn run_dir_under(&self, root: &Path) -> PathBuf {
        self.run_dir.clone().unwrap_or_else(|| {
            root.join(format!(
                "{}-{}-seed{}",
                self.train.preset.name(),
                self.target.name(),
                self.train.seed
            ))
        })
    }

    fn value(&self, key: &Key) -> String {
        let t = &self.train;
        let a: &AugmentConfig = &t.augmentation;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match (key.section, key.name) {
            ("model", "architecture") => t.architecture.name().into(),
            ("model", "kernel_size") => t.kernel_size.to_string(),
            ("model", "base_filters") => t.base_filters.to_string(),
            ("model", "input_size") => t.input_size.to_string(),
            ("train", "preset") => t.preset.name().into(),
            ("train", "epochs") => t.epochs.to_string(),
            ("train", "batch_size") => t.batch_size.to_string(),
            ("train", "optimizer") => t.optimizer.name().into(),
            ("train", "learning_rate") => t.learning_rate.to_string(),
            ("train", "adam_beta1") => t.adam.beta1.to_string(),
            ("train", "adam_beta2") => t.adam.beta2.to_string(),
            ("train", "adam_epsilon") => t.adam.eps.to_string(),
            ("train", "split_fraction") => t.split_fraction.to_string(),
            ("train", "seed") => t.seed.to_string(),
            ("train", "smooth") => t.smooth.to_string(),
            ("train", "clip_norm") => opt_text(t.clip_norm),
            ("train", "stop_at_train_dice") => opt_text(t.stop_at_train_dice),
            ("schedule", "plateau") => self.plateau_enabled.to_string(),
            ("schedule", "patience") => self.plateau.patience.to_string(),
            ("schedule", "factor") => self.plateau.factor.to_string(),
            ("schedule", "min_delta") => self.plateau.min_delta.to_string(),
            ("augment", "enabled") => t.augment.to_string(),
            ("augment", "hflip") => a.hflip.to_string(),
            ("augment", "vflip") => a.vflip.to_string(),
            ("augment", "width_shift") => a.width_shift.to_string(),
            ("augment", "height_shift") => a.height_shift.to_string(),
            ("augment", "rotation") => a.rotation.to_string(),
            ("augment", "shift_fraction_x") => a.shift_fraction_x.to_string(),
            ("augment", "shift_fraction_y") => a.shift_fraction_y.to_string(),
            ("augment", "rotation_min") => a.rotation_range.0.to_string(),
            ("augment", "rotation_max") => a.rotation_range.1.to_string(),
            ("augment", "fill") => a.fill.to_string(),
            ("data", "target") => self.target.name().into(),
            ("data", "root") => path(&self.data_root),
            ("data", "synthetic") => self.synthetic.to_string(),
            ("data", "synthetic_size") => self.synthetic_size.to_string(),
            ("data", "synthetic_seed") => self.synthetic_seed.to_string(),
            ("output", "run_dir") => path(&self.run_dir),
            _ => unreachable!("every key in KEYS has a value"),
        }
    }

    /// Every key, in table order, in the file format `parse_file` reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for k in KEYS {
            if k.section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", k.section);
                current = k.section;
            }
            let _ = writeln!(out, "{} = {}", k.name, self.value(k));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_text(text: &str, overrides: &[(&'static Key, String)]) -> Result<Settings> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.ini");
        std::fs::write(&p, text).unwrap();
        Settings::resolve(Some(&p), overrides)
    }

    #[test]
    fn every_key_round_trips() {
        for preset in [Preset::Exp1, Preset::Exp2, Preset::Exp3, Preset::Custom] {
            let mut s = Settings::from_preset(preset);
            s.data_root = Some("data/ivus".into());
            s.train.clip_norm = None;
            s.train.stop_at_train_dice = Some(0.95);
            let back = resolve_text(&s.to_text(), &[]).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn lookup_accepts_three_spellings() {
        for spec in ["train.batch_size", "batch_size", "batch-size"] {
            assert_eq!(lookup(spec).unwrap().id(), "train.batch_size");
        }
        assert_eq!(lookup("data").unwrap().id(), "data.root");
        assert!(lookup("train.nope").is_err());
    }

    #[test]
    fn overrides_beat_file_and_preset_comes_first() {
        let text = "[train]\nepochs = 7\npreset = exp1\n";
        let s = resolve_text(text, &[(lookup("epochs").unwrap(), "9".into())]).unwrap();
        assert_eq!(s.train.preset, Preset::Exp1);
        assert_eq!(s.train.batch_size, 8);
        assert_eq!(s.train.epochs, 9);
        let s = resolve_text(text, &[(lookup("preset").unwrap(), "exp2".into())]).unwrap();
        // the file's epochs still applies on top of the flag's preset
        assert_eq!((s.train.preset, s.train.epochs), (Preset::Exp2, 7));
    }

    #[test]
    fn plateau_switch_keeps_its_settings() {
        let s = resolve_text("[schedule]\nplateau = off\npatience = 3\n", &[]).unwrap();
        assert_eq!(s.train.plateau, None);
        let s = resolve_text("[schedule]\npatience = 3\nplateau = on\n", &[]).unwrap();
        assert_eq!(s.train.plateau.unwrap().patience, 3);
    }

    #[test]
    fn malformed_files_name_the_line() {
        for (text, needle) in [
            ("epochs = 3\n", "outside any section"),
            ("[train]\nepochs 3\n", "run.ini:2"),
            ("[bogus]\n", "unknown section"),
            ("[train]\nkernel_size = 3\n", "unknown key"),
            ("[train]\nepochs = many\n", "train.epochs"),
            ("[augment]\nhflip = maybe\n", "true or false"),
        ] {
            let err = resolve_text(text, &[]).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn run_section_and_comments_are_ignored() {
        let s = resolve_text("# note\n[run]\ntool_version = 9\n; more\n[train]\nseed = 4\n", &[]).unwrap();
        assert_eq!(s.train.seed, 4);
    }

    #[test]
    fn target_both_keeps_lumen_in_the_train_config() {
        let s = resolve_text("[data]\ntarget = both\n", &[]).unwrap();
        assert_eq!(s.target.targets(), vec![Target::Lumen, Target::Media]);
        let m = s.for_target(Target::Media, "x".into());
        assert_eq!((m.train.target, m.target.name()), (Target::Media, "media"));
    }

    #[test]
    fn set_entries_need_an_equals_sign() {
        assert!(parse_set(&["epochs".into()]).is_err());
        let v = parse_set(&["schedule.patience = 4".into()]).unwrap();
        assert_eq!((v[0].0.id(), v[0].1.as_str()), ("schedule.patience".into(), "4"));
    }
}
