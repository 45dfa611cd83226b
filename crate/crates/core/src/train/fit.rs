use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_params, load_state, save_params, save_state, TrainState};
use super::{EpochRecord, OptimizerState, Plateau, TrainConfig, TrainLog};
use crate::augment::augment_sample;
use crate::autodiff::Tape;
use crate::data::{derive_seed, resize_sample, split, DatasetIndex, Sample, SplitConfig, Target};
use crate::error::{Error, Result};
use crate::metrics::{binarize, dice_coefficient, soft_dice_loss, soft_dice_value, DEFAULT_THRESHOLD};
use crate::model::{build, NetworkGraph};
use crate::params::{ParamGrads, ParamStore};

pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const LOG_CSV: &str = "train_log.csv";

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;

/// Per-sample means over one pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    /// Dice of the prediction binarized at 0.5.
    pub dice: f64,
    pub steps: usize,
}

fn hard_dice(pred: &crate::Tensor, truth: &crate::metrics::BinaryMask) -> Result<f64> {
    dice_coefficient(&binarize(pred, DEFAULT_THRESHOLD)?, truth)
}

/// One pass over `samples` in a seeded shuffled order. Each mini-batch
/// accumulates per-sample gradients scaled by `1 / batch`, optionally clips
/// them, then takes one optimizer step. Epochs are 1-based.
pub fn train_epoch(
    graph: &mut NetworkGraph,
    optimizer: &mut OptimizerState,
    samples: &[Sample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("training split".into()));
    }
    if cfg.batch_size == 0 || cfg.batch_size > samples.len() {
        return Err(Error::Config(format!(
            "batch size {} does not fit {} training samples",
            cfg.batch_size,
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &[SHUFFLE_STREAM, epoch as u64],
    )));
    let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
    let mut steps = 0;
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let abort = || Error::NumericAbort { epoch, batch: b + 1 };
        let mut grads = ParamGrads::zeros_like(graph.params());
        for &i in batch {
            let augmented;
            let s = if cfg.augment {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[AUGMENT_STREAM, epoch as u64, i as u64],
                ));
                augmented = augment_sample(&samples[i], &cfg.augmentation, &mut rng).0;
                &augmented
            } else {
                &samples[i]
            };
            let truth = s.mask(cfg.target);
            let mut tape = Tape::new(graph.params());
            let x = tape.leaf(s.scan.to_tensor(), false);
            let y = graph.forward_tape(&mut tape, x)?;
            dice_sum += hard_dice(tape.value(y), truth)?;
            let loss = soft_dice_loss(&mut tape, y, &[truth], cfg.smooth)?;
            let l = tape.value(loss).item()?;
            if !l.is_finite() {
                return Err(abort());
            }
            loss_sum += l;
            tape.backward_into(loss, 1.0 / batch.len() as f64, &mut grads)?;
        }
        if !grads.all_finite() {
            return Err(abort());
        }
        if let Some(max) = cfg.clip_norm {
            grads.clip_global_norm(max);
        }
        optimizer.step(graph.params_mut(), &grads)?;
        steps += 1;
    }
    let n = samples.len() as f64;
    Ok(EpochStats {
        loss: loss_sum / n,
        dice: dice_sum / n,
        steps,
    })
}

/// Mean soft Dice loss and hard Dice without recording gradients.
pub fn evaluate(graph: &NetworkGraph, samples: &[Sample], target: Target, smooth: f64) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("validation split".into()));
    }
    let (mut loss, mut dice) = (0.0, 0.0);
    for s in samples {
        let truth = s.mask(target);
        let pred = graph.forward(&s.scan.to_tensor())?;
        loss += soft_dice_value(&pred, &[truth], smooth)?;
        dice += hard_dice(&pred, truth)?;
    }
    let n = samples.len() as f64;
    Ok(EpochStats {
        loss: loss / n,
        dice: dice / n,
        steps: 0,
    })
}

pub struct FitOutcome {
    /// Model with the weights after the last completed epoch.
    pub graph: NetworkGraph,
    /// Weights from the epoch with the lowest validation loss.
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: TrainLog,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Epoch-by-epoch driver owning the model, optimizer, schedule and log.
pub struct Trainer {
    config: TrainConfig,
    graph: NetworkGraph,
    optimizer: OptimizerState,
    plateau: Option<Plateau>,
    log: TrainLog,
    best_val_loss: Option<f64>,
    best_epoch: Option<usize>,
    best_params: Option<ParamStore>,
    train_ids: Vec<String>,
    val_ids: Vec<String>,
    train: Vec<Sample>,
    val: Vec<Sample>,
    run_dir: Option<PathBuf>,
}

fn load_resized(data: &DatasetIndex, ids: &[String], size: usize) -> Result<Vec<Sample>> {
    data.load_ids(ids)?
        .into_iter()
        .map(|s| {
            if s.scan.dims() == (size, size) {
                Ok(s)
            } else {
                resize_sample(&s, size)
            }
        })
        .collect()
}

impl Trainer {
    /// Validates the config, splits and loads the data, and builds the model.
    pub fn new(config: TrainConfig, data: &DatasetIndex) -> Result<Self> {
        config.validate()?;
        let graph = build(&config.arch_config())?;
        let optimizer = OptimizerState::new(config.optimizer, config.learning_rate, config.adam, graph.params());
        let plateau = config.plateau.map(|p| Plateau::new(p, config.learning_rate));
        Self::assemble(config, data, graph, optimizer, plateau, TrainLog::default(), None, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        data: &DatasetIndex,
        graph: NetworkGraph,
        optimizer: OptimizerState,
        plateau: Option<Plateau>,
        log: TrainLog,
        best_val_loss: Option<f64>,
        best_epoch: Option<usize>,
    ) -> Result<Self> {
        let (train_ids, val_ids) = split(
            data,
            &SplitConfig {
                train_fraction: config.split_fraction,
                seed: derive_seed(config.seed, &[SPLIT_STREAM]),
            },
        )?;
        if config.batch_size > train_ids.len() {
            return Err(Error::Config(format!(
                "batch size {} exceeds the {} training samples",
                config.batch_size,
                train_ids.len()
            )));
        }
        let train = load_resized(data, &train_ids, config.input_size)?;
        let val = load_resized(data, &val_ids, config.input_size)?;
        Ok(Self {
            config,
            graph,
            optimizer,
            plateau,
            log,
            best_val_loss,
            best_epoch,
            best_params: None,
            train_ids,
            val_ids,
            train,
            val,
            run_dir: None,
        })
    }

    /// Continues from a saved state; the data must be the set the run
    /// started with.
    pub fn from_state(state: TrainState, data: &DatasetIndex) -> Result<Self> {
        state.config.validate()?;
        let mut graph = build(&state.config.arch_config())?;
        graph.params_mut().assign_from(&state.params)?;
        if state.epoch != state.log.len() {
            return Err(Error::Checkpoint(format!(
                "state records {} epochs but its log has {}",
                state.epoch,
                state.log.len()
            )));
        }
        Self::assemble(
            state.config,
            data,
            graph,
            state.optimizer,
            state.plateau,
            state.log,
            state.best_val_loss,
            state.best_epoch,
        )
    }

    /// Loads `last.ckpt`-style state and keeps writing artifacts next to it.
    pub fn resume(path: &Path, data: &DatasetIndex) -> Result<Self> {
        let mut t = Self::from_state(load_state(path)?, data)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let best = dir.join(BEST_CKPT);
        if best.is_file() {
            t.best_params = Some(load_params(&best)?.1);
        }
        t.run_dir = Some(dir);
        Ok(t)
    }

    /// Writes `best.ckpt`, `last.ckpt` and the CSV log into `dir` as
    /// training progresses.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        self.run_dir = Some(dir);
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn train_ids(&self) -> &[String] {
        &self.train_ids
    }

    pub fn val_ids(&self) -> &[String] {
        &self.val_ids
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.lr
    }

    /// True once all epochs ran or the training-Dice target was met.
    pub fn is_finished(&self) -> bool {
        let reached = match (self.config.stop_at_train_dice, self.log.records.last()) {
            (Some(t), Some(r)) => r.train_dice >= t,
            _ => false,
        };
        reached || self.log.len() >= self.config.epochs
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            config: self.config.clone(),
            epoch: self.log.len(),
            params: self.graph.params().clone(),
            optimizer: self.optimizer.clone(),
            plateau: self.plateau.clone(),
            log: self.log.clone(),
            best_val_loss: self.best_val_loss,
            best_epoch: self.best_epoch,
        }
    }

    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.log.len() + 1;
        let lr = self.optimizer.lr;
        let tr = train_epoch(&mut self.graph, &mut self.optimizer, &self.train, &self.config, epoch)?;
        let va = evaluate(&self.graph, &self.val, self.config.target, self.config.smooth)?;
        if !va.loss.is_finite() {
            return Err(Error::NumericAbort { epoch, batch: 0 });
        }
        if self.best_val_loss.is_none_or(|b| va.loss < b) {
            self.best_val_loss = Some(va.loss);
            self.best_epoch = Some(epoch);
            self.best_params = Some(self.graph.params().clone());
            if let Some(dir) = &self.run_dir {
                save_params(&dir.join(BEST_CKPT), &self.graph.config, self.graph.params())?;
            }
        }
        if let Some(p) = &mut self.plateau {
            self.optimizer.lr = p.update(va.loss);
        }
        let rec = EpochRecord {
            epoch,
            train_loss: tr.loss,
            train_dice: tr.dice,
            val_loss: va.loss,
            val_dice: va.dice,
            lr,
        };
        self.log.push(rec.clone())?;
        if let Some(dir) = &self.run_dir {
            std::fs::write(dir.join(LOG_CSV), self.log.to_csv())?;
            save_state(&dir.join(LAST_CKPT), &self.state())?;
        }
        Ok(rec)
    }

    /// Runs epochs until [`Trainer::is_finished`].
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while !self.is_finished() {
            let rec = self.step_epoch()?;
            on_epoch(&rec);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<FitOutcome> {
        let (Some(best_epoch), Some(best_val_loss)) = (self.best_epoch, self.best_val_loss) else {
            return Err(Error::Contract("no epoch has completed".into()));
        };
        let best_params = match self.best_params {
            Some(p) => p,
            // resumed without a best checkpoint on disk
            None => self.graph.params().clone(),
        };
        Ok(FitOutcome {
            graph: self.graph,
            best_params,
            best_epoch,
            best_val_loss,
            log: self.log,
            train_ids: self.train_ids,
            val_ids: self.val_ids,
        })
    }
}

/// Builds, splits and trains in memory.
pub fn fit(config: TrainConfig, data: &DatasetIndex) -> Result<FitOutcome> {
    let mut t = Trainer::new(config, data)?;
    t.run(|_| {})?;
    t.finish()
}
