//! Layer graphs for the two segmentation networks.
//!
//! A [`NetworkGraph`] is an ordered list of [`LayerSpec`]s. Every layer reads
//! the previous layer's output; `Concat` layers additionally read the output
//! of an earlier layer (the skip source). The same interpreter drives both
//! plain inference ([`Eval`]) and taped training ([`Tape`]) through the
//! [`Executor`] trait.

mod build;
mod summary;

pub use build::{build, build_simple_unet, build_vgg16_unet, skeleton, ArchConfig, Architecture};
pub use summary::{Summary, SummaryRow};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{self, Padding};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        weight: ParamId,
        bias: ParamId,
    },
    Prelu {
        alpha: ParamId,
    },
    MaxPool,
    Upsample,
    /// Channel concatenation of the previous output with layer `skip`'s.
    Concat {
        skip: usize,
    },
    Sigmoid,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Prelu { .. } => "prelu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Upsample => "upsample",
            LayerKind::Concat { .. } => "concat",
            LayerKind::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    /// `(channels, height, width)` produced by this layer.
    pub output: (usize, usize, usize),
}

impl LayerSpec {
    pub fn kernel_size(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv { kernel, .. } => Some(kernel),
            _ => None,
        }
    }

    pub fn filter_count(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv { filters, .. } => Some(filters),
            _ => None,
        }
    }

    pub fn skip_source(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Concat { skip } => Some(skip),
            _ => None,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self.kind {
            LayerKind::Conv { weight, bias, .. } => vec![weight, bias],
            LayerKind::Prelu { alpha } => vec![alpha],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct NetworkGraph {
    pub config: ArchConfig,
    pub input: InputSpec,
    layers: Vec<LayerSpec>,
    params: ParamStore,
    /// For each layer, the last layer index that reads its output.
    last_use: Vec<usize>,
}

impl NetworkGraph {
    pub(crate) fn new(
        config: ArchConfig,
        input: InputSpec,
        layers: Vec<LayerSpec>,
        params: ParamStore,
    ) -> Self {
        let mut last_use: Vec<usize> = (0..layers.len()).map(|i| i + 1).collect();
        for l in &layers {
            if let LayerKind::Concat { skip } = l.kind {
                last_use[skip] = last_use[skip].max(l.id);
            }
        }
        Self {
            config,
            input,
            layers,
            params,
            last_use,
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Sum of every conv kernel, bias and PReLU alpha element.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Number of kernel weights only (no biases or alphas).
    pub fn kernel_weight_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv { weight, .. } => Some(self.params.get(weight).numel()),
                _ => None,
            })
            .sum()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_conv())
    }

    pub fn encoder_conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.conv_layers().filter(|l| l.name.starts_with("enc"))
    }

    pub fn summary(&self) -> Summary {
        Summary::of(self)
    }

    /// Runs the layer list on `exec`, releasing intermediate values as soon
    /// as no later layer reads them.
    pub fn run<E: Executor>(&self, exec: &mut E, input: E::Value) -> Result<E::Value> {
        let mut saved: Vec<Option<E::Value>> = vec![None; self.layers.len()];
        let mut current = input;
        for layer in &self.layers {
            let out = match &layer.kind {
                LayerKind::Conv {
                    weight,
                    bias,
                    ..
                } => exec.conv(&current, *weight, *bias),
                LayerKind::Prelu { alpha } => exec.prelu(&current, *alpha),
                LayerKind::MaxPool => exec.maxpool(&current),
                LayerKind::Upsample => exec.upsample(&current),
                LayerKind::Concat { skip } => {
                    let s = saved[*skip].take().ok_or_else(|| {
                        Error::Contract(format!("skip source {skip} is not available"))
                    })?;
                    let r = exec.concat(&s, &current);
                    if self.last_use[*skip] > layer.id {
                        saved[*skip] = Some(s);
                    }
                    r
                }
                LayerKind::Sigmoid => exec.sigmoid(&current),
            }
            .map_err(|e| e.in_layer(layer.id, &layer.name))?;
            if self.last_use[layer.id] > layer.id + 1 {
                saved[layer.id] = Some(out.clone());
            }
            current = out;
        }
        Ok(current)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = shape else {
            return Err(Error::Rank {
                op: "forward",
                expected: 4,
                found: shape.to_vec(),
            });
        };
        for (axis, want, got) in [
            ("channels", self.input.channels, *c),
            ("height", self.input.height, *h),
            ("width", self.input.width, *w),
        ] {
            if want != got {
                return Err(Error::Dimension {
                    op: "forward",
                    axis,
                    expected: want,
                    found: got,
                });
            }
        }
        Ok(())
    }

    /// Inference pass producing the `[N, 1, H, W]` probability map.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.shape())?;
        let mut exec = Eval {
            store: &self.params,
        };
        self.run(&mut exec, input.clone())
    }

    /// Taped pass; the returned node can feed a loss and `backward`.
    pub fn forward_tape(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var> {
        self.check_input(tape.value(input).shape())?;
        self.run(tape, input)
    }
}

/// Evaluates layer operations on some value type.
pub trait Executor {
    type Value: Clone;

    fn conv(&mut self, x: &Self::Value, weight: ParamId, bias: ParamId) -> Result<Self::Value>;
    fn prelu(&mut self, x: &Self::Value, alpha: ParamId) -> Result<Self::Value>;
    fn maxpool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn upsample(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat(&mut self, skip: &Self::Value, x: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
}

/// Tape-free executor: intermediates are dropped as soon as possible.
pub struct Eval<'p> {
    pub store: &'p ParamStore,
}

impl Executor for Eval<'_> {
    type Value = Tensor;

    fn conv(&mut self, x: &Tensor, weight: ParamId, bias: ParamId) -> Result<Tensor> {
        ops::conv2d(
            x,
            self.store.get(weight),
            self.store.get(bias),
            1,
            Padding::Same,
        )
    }

    fn prelu(&mut self, x: &Tensor, alpha: ParamId) -> Result<Tensor> {
        ops::prelu(x, self.store.get(alpha))
    }

    fn maxpool(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::maxpool2(x)?.output)
    }

    fn upsample(&mut self, x: &Tensor) -> Result<Tensor> {
        ops::upsample2_nearest(x)
    }

    fn concat(&mut self, skip: &Tensor, x: &Tensor) -> Result<Tensor> {
        ops::concat_channels(skip, x)
    }

    fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::sigmoid(x))
    }
}

impl Executor for Tape<'_> {
    type Value = Var;

    fn conv(&mut self, x: &Var, weight: ParamId, bias: ParamId) -> Result<Var> {
        let k = self.param(weight);
        let b = self.param(bias);
        self.conv2d(*x, k, b, 1, Padding::Same)
    }

    fn prelu(&mut self, x: &Var, alpha: ParamId) -> Result<Var> {
        let a = self.param(alpha);
        Tape::prelu(self, *x, a)
    }

    fn maxpool(&mut self, x: &Var) -> Result<Var> {
        self.maxpool2(*x)
    }

    fn upsample(&mut self, x: &Var) -> Result<Var> {
        self.upsample2(*x)
    }

    fn concat(&mut self, skip: &Var, x: &Var) -> Result<Var> {
        Tape::concat(self, *skip, *x)
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        Ok(Tape::sigmoid(self, *x))
    }
}
