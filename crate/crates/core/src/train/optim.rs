use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

fn check_grads(store: &ParamStore, grads: &ParamGrads) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::Dimension {
            op: "optimizer",
            axis: "parameters",
            expected: store.len(),
            found: grads.len(),
        });
    }
    for ((_, _, w), g) in store.iter().zip(grads.iter()) {
        w.check_same_shape(g, "optimizer")?;
    }
    Ok(())
}

/// Subtracts `delta` unless it is zero, so a zero step never touches the
/// sign bit of a weight.
fn apply(w: &mut f64, delta: f64) {
    if delta != 0.0 {
        *w -= delta;
    }
}

/// `w <- w - lr * g`.
pub fn sgd_step(store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
    check_grads(store, grads)?;
    let ids: Vec<_> = store.ids().collect();
    for (id, g) in ids.into_iter().zip(grads.iter()) {
        for (w, &gv) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
            apply(w, lr * gv);
        }
    }
    Ok(())
}

/// Bias-corrected Adam; `state` holds the moments and step counter.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    lr: f64,
    p: AdamParams,
) -> Result<()> {
    check_grads(store, grads)?;
    state.ensure_moments(store)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - p.beta1.powi(t);
    let c2 = 1.0 - p.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (k, (id, g)) in ids.into_iter().zip(grads.iter()).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, w) in store.get_mut(id).data_mut().iter_mut().enumerate() {
            let gv = g.data()[i];
            m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * gv;
            v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * gv * gv;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            apply(w, lr * m_hat / (v_hat.sqrt() + p.eps));
        }
    }
    Ok(())
}

/// Everything an optimizer carries between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub adam: AdamParams,
    pub step: u64,
    /// Adam first and second moments, aligned with the parameter store.
    /// Empty for SGD.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, adam: AdamParams, store: &ParamStore) -> Self {
        let zeros = || -> Vec<Tensor> {
            match kind {
                OptimizerKind::Adam => store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
                OptimizerKind::Sgd => Vec::new(),
            }
        };
        Self {
            kind,
            lr,
            adam,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn ensure_moments(&mut self, store: &ParamStore) -> Result<()> {
        if self.m.is_empty() && self.v.is_empty() {
            self.m = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::Dimension {
                op: "adam",
                axis: "parameters",
                expected: store.len(),
                found: self.m.len(),
            });
        }
        for ((_, _, w), (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            w.check_same_shape(m, "adam")?;
            w.check_same_shape(v, "adam")?;
        }
        Ok(())
    }

    /// One update at the current learning rate.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => {
                sgd_step(store, grads, self.lr)?;
                self.step += 1;
                Ok(())
            }
            OptimizerKind::Adam => {
                let (lr, p) = (self.lr, self.adam);
                adam_step(store, grads, self, lr, p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![3], vec![w, -w, 2.0 * w]).unwrap()).unwrap();
        s
    }

    fn grads_of(store: &ParamStore, g: &[f64]) -> ParamGrads {
        let mut gr = ParamGrads::zeros_like(store);
        let id = store.id("w").unwrap();
        gr.get_mut(id).data_mut().copy_from_slice(g);
        gr
    }

    #[test]
    fn sgd_definition() {
        let mut s = one(1.0);
        let g = grads_of(&s, &[0.5, 0.5, 0.0]);
        sgd_step(&mut s, &g, 0.01).unwrap();
        assert_eq!(s.get(s.id("w").unwrap()).data(), &[0.995, -1.005, 2.0]);
    }

    #[test]
    fn sgd_half_steps_compose() {
        let mut a = one(0.3);
        let mut b = one(0.3);
        let g = grads_of(&a, &[0.25, -0.5, 1.0]);
        sgd_step(&mut a, &g, 0.5).unwrap();
        sgd_step(&mut a, &g, 0.5).unwrap();
        sgd_step(&mut b, &g, 1.0).unwrap();
        let id = a.id("w").unwrap();
        for (x, y) in a.get(id).data().iter().zip(b.get(id).data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        for scale in [1e-3, 1.0, 10.0] {
            let mut s = one(1.0);
            let g = grads_of(&s, &[scale, -scale, 3.0 * scale]);
            let mut st = OptimizerState::new(OptimizerKind::Adam, 0.1, AdamParams::default(), &s);
            st.step(&mut s, &g).unwrap();
            let w = s.get(s.id("w").unwrap()).data();
            // m_hat / sqrt(v_hat) = sign(g) exactly, only eps perturbs it
            let expect = |g: f64| 0.1 * g.signum() * g.abs() / (g.abs() + 1e-8);
            assert!((w[0] - (1.0 - expect(scale))).abs() < 1e-15);
            assert!((w[1] - (-1.0 - expect(-scale))).abs() < 1e-15);
            assert!((w[2] - (2.0 - expect(3.0 * scale))).abs() < 1e-15);
            assert_eq!(st.step, 1);
        }
    }

    #[test]
    fn zero_gradient_or_lr_is_noop() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut s = one(-0.0);
            let before = s.clone();
            let zero = grads_of(&s, &[0.0; 3]);
            let mut st = OptimizerState::new(kind, 0.5, AdamParams::default(), &s);
            st.step(&mut s, &zero).unwrap();
            assert_eq!(s, before);

            let mut s = one(0.7);
            let before = s.clone();
            let g = grads_of(&s, &[1.0, -2.0, 3.0]);
            let mut st = OptimizerState::new(kind, 0.0, AdamParams::default(), &s);
            st.step(&mut s, &g).unwrap();
            let bits = |p: &ParamStore| -> Vec<u64> {
                p.get(p.id("w").unwrap()).data().iter().map(|v| v.to_bits()).collect()
            };
            assert_eq!(bits(&s), bits(&before));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = one(1.0);
        let mut other = ParamStore::new();
        other.insert("w", Tensor::zeros(&[4])).unwrap();
        let g = ParamGrads::zeros_like(&other);
        assert!(sgd_step(&mut s, &g, 0.1).is_err());
    }
}
