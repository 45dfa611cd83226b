//! Optimizers, the plateau schedule, the epoch loop and checkpoints.

mod checkpoint;
mod fit;
mod optim;
mod schedule;

pub use checkpoint::{
    load_model, load_params, load_state, save_params, save_state, TrainState, FORMAT_VERSION,
};
pub use fit::{evaluate, fit, train_epoch, EpochStats, FitOutcome, Trainer, BEST_CKPT, LAST_CKPT, LOG_CSV};
pub use optim::{adam_step, sgd_step, AdamParams, OptimizerKind, OptimizerState};
pub use schedule::{Plateau, PlateauConfig};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::Target;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_SMOOTH;
use crate::model::{ArchConfig, Architecture};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Exp1,
    Exp2,
    Exp3,
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp1 => "exp1",
            Preset::Exp2 => "exp2",
            Preset::Exp3 => "exp3",
            Preset::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Preset::Exp1),
            "exp2" => Ok(Preset::Exp2),
            "exp3" => Ok(Preset::Exp3),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub architecture: Architecture,
    pub kernel_size: usize,
    pub base_filters: usize,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam: AdamParams,
    /// `None` keeps the learning rate fixed.
    pub plateau: Option<PlateauConfig>,
    /// Fraction of the labelled set used for training; the rest validates.
    pub split_fraction: f64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub target: Target,
    pub seed: u64,
    pub smooth: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Ends training early once the epoch's training Dice reaches this value.
    pub stop_at_train_dice: Option<f64>,
}

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let exp3 = Self {
            preset,
            architecture: Architecture::Vgg16Unet,
            kernel_size: 5,
            base_filters: Architecture::Vgg16Unet.default_base_filters(),
            input_size: 224,
            epochs: 100,
            batch_size: 5,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            adam: AdamParams::default(),
            plateau: Some(PlateauConfig::default()),
            split_fraction: 0.8,
            augment: true,
            augmentation: AugmentConfig::default(),
            target: Target::Lumen,
            seed: 0,
            smooth: DEFAULT_SMOOTH,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            stop_at_train_dice: None,
        };
        match preset {
            Preset::Exp3 | Preset::Custom => exp3,
            Preset::Exp2 => Self {
                epochs: 200,
                split_fraction: 0.9,
                augment: false,
                plateau: None,
                ..exp3
            },
            Preset::Exp1 => Self {
                architecture: Architecture::SimpleUnet,
                kernel_size: 3,
                base_filters: Architecture::SimpleUnet.default_base_filters(),
                input_size: 384,
                epochs: 100,
                batch_size: 8,
                optimizer: OptimizerKind::Adam,
                learning_rate: 1e-6,
                split_fraction: 0.9,
                augment: false,
                plateau: None,
                ..exp3
            },
        }
    }

    pub fn arch_config(&self) -> ArchConfig {
        ArchConfig {
            arch: self.architecture,
            kernel_size: self.kernel_size,
            base_filters: self.base_filters,
            input_channels: 1,
            input_size: self.input_size,
            seed: self.seed,
        }
    }

    /// Rejects inconsistent settings before any work is done.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.arch_config().validate()?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split fraction must be in (0, 1), got {}", self.split_fraction));
        }
        if !(self.smooth > 0.0 && self.smooth.is_finite()) {
            return bad(format!("smooth must be positive, got {}", self.smooth));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        if let Some(d) = self.stop_at_train_dice {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("stop-at-train-dice must be in (0, 1], got {d}"));
            }
        }
        self.adam.validate()?;
        if let Some(p) = &self.plateau {
            p.validate()?;
        }
        self.augmentation.validate()
    }
}

/// One completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_dice: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    /// Learning rate the epoch was trained with.
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,train_dice,val_loss,val_dice,lr";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        let next = self.records.last().map_or(1, |r| r.epoch + 1);
        if rec.epoch != next {
            return Err(Error::Contract(format!(
                "log expects epoch {next}, got {}",
                rec.epoch
            )));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn min_val_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_loss).min_by(f64::total_cmp)
    }

    /// Values are written in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_dice, r.val_loss, r.val_dice, r.lr
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(LOG_HEADER) {
            return Err(Error::Contract("training log: unexpected header".into()));
        }
        let mut log = TrainLog::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Contract(format!("training log line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad());
            log.push(EpochRecord {
                epoch: f[0].trim().parse().map_err(|_| bad())?,
                train_loss: num(1)?,
                train_dice: num(2)?,
                val_loss: num(3)?,
                val_dice: num(4)?,
                lr: num(5)?,
            })?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_echo_protocols() {
        let e1 = TrainConfig::preset(Preset::Exp1);
        assert_eq!(
            (e1.architecture, e1.epochs, e1.batch_size, e1.optimizer, e1.learning_rate),
            (Architecture::SimpleUnet, 100, 8, OptimizerKind::Adam, 1e-6)
        );
        assert_eq!((e1.split_fraction, e1.augment, e1.input_size), (0.9, false, 384));

        let e2 = TrainConfig::preset(Preset::Exp2);
        assert_eq!(
            (e2.architecture, e2.epochs, e2.batch_size, e2.optimizer, e2.learning_rate),
            (Architecture::Vgg16Unet, 200, 5, OptimizerKind::Sgd, 0.01)
        );
        assert_eq!((e2.split_fraction, e2.augment, e2.input_size, e2.kernel_size), (0.9, false, 224, 5));

        let e3 = TrainConfig::preset(Preset::Exp3);
        assert_eq!((e3.epochs, e3.batch_size, e3.learning_rate, e3.split_fraction), (100, 5, 0.01, 0.8));
        assert!(e3.augment);
        assert_eq!(e3.plateau.map(|p| p.patience), Some(20));
        for p in [e1, e2, e3] {
            p.validate().unwrap();
        }
    }

    #[test]
    fn validation_rejects_nonsense() {
        let base = TrainConfig::preset(Preset::Exp3);
        for cfg in [
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { split_fraction: 1.0, ..base.clone() },
            TrainConfig { input_size: 200, ..base.clone() },
            TrainConfig { learning_rate: f64::NAN, ..base.clone() },
            TrainConfig { kernel_size: 4, ..base.clone() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn log_csv_round_trip() {
        let mut log = TrainLog::default();
        for e in 1..=3 {
            log.push(EpochRecord {
                epoch: e,
                train_loss: 0.1 / e as f64,
                train_dice: 1.0 / 3.0,
                val_loss: 0.7,
                val_dice: 0.2,
                lr: 0.01,
            })
            .unwrap();
        }
        assert_eq!(TrainLog::from_csv(&log.to_csv()).unwrap(), log);
        assert!(log.to_csv().starts_with("epoch,train_loss,train_dice,val_loss,val_dice,lr\n"));
    }

    #[test]
    fn log_rejects_gaps() {
        let mut log = TrainLog::default();
        let r = EpochRecord {
            epoch: 2,
            train_loss: 0.0,
            train_dice: 0.0,
            val_loss: 0.0,
            val_dice: 0.0,
            lr: 0.0,
        };
        assert!(log.push(r).is_err());
    }
}
