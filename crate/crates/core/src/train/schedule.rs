use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    /// A loss must beat the best by more than this to count as improvement.
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 20,
            factor: 0.1,
            min_delta: 1e-4,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("plateau patience must be at least 1".into()));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("plateau factor must be in (0, 1), got {}", self.factor)));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::Config(format!("plateau min-delta must be >= 0, got {}", self.min_delta)));
        }
        Ok(())
    }
}

/// Reduce-on-plateau: after `patience` consecutive epochs without
/// improvement the rate is multiplied by `factor` and the wait restarts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub config: PlateauConfig,
    pub lr: f64,
    pub best: Option<f64>,
    pub wait: usize,
    pub reductions: usize,
}

impl Plateau {
    pub fn new(config: PlateauConfig, lr: f64) -> Self {
        Self {
            config,
            lr,
            best: None,
            wait: 0,
            reductions: 0,
        }
    }

    /// Feeds one epoch's validation loss and returns the rate for the next.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        let improved = match self.best {
            None => !val_loss.is_nan(),
            Some(b) => val_loss < b - self.config.min_delta,
        };
        if improved {
            self.best = Some(val_loss);
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.config.patience {
                self.lr *= self.config.factor;
                self.reductions += 1;
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Epochs (1-based) after which the rate dropped.
    fn reductions_at(losses: &[f64]) -> Vec<usize> {
        let mut p = Plateau::new(PlateauConfig::default(), 0.01);
        let mut out = Vec::new();
        for (i, &l) in losses.iter().enumerate() {
            let before = p.lr;
            if p.update(l) < before {
                out.push(i + 1);
            }
        }
        out
    }

    #[test]
    fn decreasing_never_reduces() {
        let losses: Vec<f64> = (0..100).map(|i| 1.0 - i as f64 * 0.005).collect();
        assert!(reductions_at(&losses).is_empty());
    }

    #[test]
    fn flat_run_reduces_at_21() {
        let mut p = Plateau::new(PlateauConfig::default(), 0.01);
        for e in 1..=21 {
            let lr = p.update(0.5);
            if e < 21 {
                assert_eq!(lr, 0.01);
            } else {
                assert!((lr - 0.001).abs() < 1e-18);
            }
        }
        assert_eq!(reductions_at(&[0.5; 40]), vec![21]);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut losses = vec![0.5; 40];
        losses[18] = 0.4; // epoch 19
        for l in &mut losses[19..] {
            *l = 0.4;
        }
        assert_eq!(reductions_at(&losses), vec![39]);
    }

    #[test]
    fn tiny_gains_do_not_count() {
        let losses: Vec<f64> = (0..21).map(|i| 0.5 - i as f64 * 1e-6).collect();
        assert_eq!(reductions_at(&losses), vec![21]);
    }

    proptest! {
        #[test]
        fn never_increases(losses in proptest::collection::vec(0.0f64..1.0, 1..120)) {
            let mut p = Plateau::new(PlateauConfig { patience: 3, ..PlateauConfig::default() }, 0.1);
            let mut prev = p.lr;
            for l in losses {
                let lr = p.update(l);
                prop_assert!(lr <= prev);
                prev = lr;
            }
        }
    }
}
