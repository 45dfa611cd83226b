//! Central finite-difference checks of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Differences smaller than this are compared absolutely rather than
/// relatively, so exact zeros do not divide by zero.
pub const REL_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// One scalar the check perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Input { input: usize, index: usize },
    Param { id: ParamId, index: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub probe: Probe,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub results: Vec<ProbeResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|r| r.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ProbeResult> {
        self.results.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

fn eval<F>(store: &ParamStore, inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Compares the tape's gradient of the scalar built by `f` with central
/// differences of step `h` at every probe. `f` receives one leaf per input.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    inputs: &[Tensor],
    f: F,
    probes: &[Probe],
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&mut tape, &vars)?;
        let g = tape.backward(loss)?;
        let input_grads: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (g.params, input_grads)
    };
    let mut inputs = inputs.to_vec();
    let mut results = Vec::with_capacity(probes.len());
    for &probe in probes {
        let (analytic, numeric) = match probe {
            Probe::Input { input, index } => {
                let x0 = inputs[input].data()[index];
                inputs[input].data_mut()[index] = x0 + h;
                let plus = eval(store, &inputs, &f)?;
                inputs[input].data_mut()[index] = x0 - h;
                let minus = eval(store, &inputs, &f)?;
                inputs[input].data_mut()[index] = x0;
                (grads.1[input].data()[index], (plus - minus) / (2.0 * h))
            }
            Probe::Param { id, index } => {
                let w0 = store.get(id).data()[index];
                store.get_mut(id).data_mut()[index] = w0 + h;
                let plus = eval(store, &inputs, &f)?;
                store.get_mut(id).data_mut()[index] = w0 - h;
                let minus = eval(store, &inputs, &f)?;
                store.get_mut(id).data_mut()[index] = w0;
                (grads.0.get(id).data()[index], (plus - minus) / (2.0 * h))
            }
        };
        results.push(ProbeResult {
            probe,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { results })
}
