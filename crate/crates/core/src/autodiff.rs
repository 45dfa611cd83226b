//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Tape`] borrows the [`ParamStore`] it reads parameters from; operations
//! append nodes holding their forward value, and [`Tape::backward`] walks the
//! nodes in reverse, releasing each forward value once its local gradient has
//! been propagated. Nodes only ever reference earlier nodes, so the graph is
//! acyclic by construction.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, Padding};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Param,
    Conv2d,
    Prelu,
    Sigmoid,
    MaxPool2,
    Upsample2,
    Concat,
    Sum,
    Dot,
    SoftDice,
    Mean,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    },
    Prelu {
        input: Var,
        alpha: Var,
    },
    Sigmoid {
        input: Var,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Upsample2 {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
        a_channels: usize,
    },
    Sum {
        input: Var,
    },
    Dot {
        input: Var,
        weights: Tensor,
    },
    SoftDice {
        pred: Var,
        target: Tensor,
        smooth: f64,
    },
    Mean {
        inputs: Vec<Var>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Prelu { .. } => OpKind::Prelu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::MaxPool2 { .. } => OpKind::MaxPool2,
            Op::Upsample2 { .. } => OpKind::Upsample2,
            Op::Concat { .. } => OpKind::Concat,
            Op::Sum { .. } => OpKind::Sum,
            Op::Dot { .. } => OpKind::Dot,
            Op::SoftDice { .. } => OpKind::SoftDice,
            Op::Mean { .. } => OpKind::Mean,
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameters (read from the store) and after release.
    value: Option<Tensor>,
    requires_grad: bool,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Result of [`Tape::backward`].
pub struct Grads {
    pub params: ParamGrads,
    leaves: HashMap<Var, Tensor>,
}

impl Grads {
    pub fn param(&self, id: ParamId) -> &Tensor {
        self.params.get(id)
    }

    /// Gradient of a leaf created with `requires_grad = true`.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        let node = &self.nodes[var.0];
        match node.op {
            Op::Param(id) => self.store.get(id),
            _ => node.value.as_ref().expect("value released"),
        }
    }

    fn push(&mut self, op: Op, value: Option<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, Some(value), requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), None, true);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let y = ops::conv2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            padding,
        )?;
        let rg = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            Some(y),
            rg,
        ))
    }

    pub fn prelu(&mut self, input: Var, alpha: Var) -> Result<Var> {
        let y = ops::prelu(self.value(input), self.value(alpha))?;
        let rg = self.needs(&[input, alpha]);
        Ok(self.push(Op::Prelu { input, alpha }, Some(y), rg))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let y = ops::sigmoid(self.value(input));
        let rg = self.needs(&[input]);
        self.push(Op::Sigmoid { input }, Some(y), rg)
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let input_shape = x.shape().to_vec();
        let pooled = ops::maxpool2(x)?;
        let rg = self.needs(&[input]);
        Ok(self.push(
            Op::MaxPool2 {
                input,
                argmax: pooled.argmax,
                input_shape,
            },
            Some(pooled.output),
            rg,
        ))
    }

    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let y = ops::upsample2_nearest(self.value(input))?;
        let rg = self.needs(&[input]);
        Ok(self.push(Op::Upsample2 { input }, Some(y), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        let a_channels = self.value(a).shape()[1];
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Concat { a, b, a_channels }, Some(y), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.needs(&[input]);
        self.push(Op::Sum { input }, Some(Tensor::scalar(s)), rg)
    }

    /// `sum(input * weights)`: contracts a tensor to a scalar with fixed
    /// weights, mainly to probe gradients of non-scalar ops.
    pub fn dot(&mut self, input: Var, weights: Tensor) -> Result<Var> {
        let x = self.value(input);
        x.check_same_shape(&weights, "dot")?;
        let s: f64 = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.needs(&[input]);
        Ok(self.push(Op::Dot { input, weights }, Some(Tensor::scalar(s)), rg))
    }

    /// Smoothed soft Dice loss averaged over the batch axis:
    /// `1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)` per sample.
    pub fn soft_dice(&mut self, pred: Var, target: Tensor, smooth: f64) -> Result<Var> {
        if smooth.is_nan() || smooth < 0.0 {
            return Err(Error::Contract(format!("smooth must be >= 0, got {smooth}")));
        }
        let p = self.value(pred);
        p.check_same_shape(&target, "soft_dice_loss")?;
        let loss = soft_dice_mean(p, &target, smooth);
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Op::SoftDice {
                pred,
                target,
                smooth,
            },
            Some(Tensor::scalar(loss)),
            rg,
        ))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Contract("mean of no values".into()));
        }
        let mut s = 0.0;
        for &v in inputs {
            s += self.value(v).item()?;
        }
        let rg = self.needs(inputs);
        Ok(self.push(
            Op::Mean {
                inputs: inputs.to_vec(),
            },
            Some(Tensor::scalar(s / inputs.len() as f64)),
            rg,
        ))
    }

    /// Differentiates the scalar `loss` with respect to every parameter and
    /// every leaf that requires a gradient.
    pub fn backward(self, loss: Var) -> Result<Grads> {
        let mut params = ParamGrads::zeros_like(self.store);
        let leaves = self.propagate(loss, 1.0, &mut params)?;
        Ok(Grads { params, leaves })
    }

    /// Like [`backward`](Self::backward) but seeds the loss gradient with
    /// `seed` and accumulates into an existing parameter gradient buffer.
    pub fn backward_into(self, loss: Var, seed: f64, acc: &mut ParamGrads) -> Result<()> {
        if acc.len() != self.store.len() {
            return Err(Error::Contract(
                "gradient buffer does not match parameter store".into(),
            ));
        }
        self.propagate(loss, seed, acc).map(|_| ())
    }

    fn propagate(
        mut self,
        loss: Var,
        seed: f64,
        params: &mut ParamGrads,
    ) -> Result<HashMap<Var, Tensor>> {
        let shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shape, seed));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                self.nodes[i].value = None;
                continue;
            };
            if !self.nodes[i].requires_grad {
                self.nodes[i].value = None;
                continue;
            }
            for (parent, contrib) in self.local_grads(i, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            match self.nodes[i].op {
                Op::Param(id) => params.get_mut(id).add_assign(&g)?,
                Op::Leaf => {
                    leaves.insert(Var(i), g);
                }
                _ => {}
            }
            self.nodes[i].value = None;
        }
        Ok(leaves)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        Ok(match &node.op {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let r = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *padding,
                    self.wants(*input),
                )?;
                let mut out = vec![(*kernel, r.kernel), (*bias, r.bias)];
                if let Some(dx) = r.input {
                    out.push((*input, dx));
                }
                out
            }
            Op::Prelu { input, alpha } => {
                let (dx, da) = ops::prelu_backward(self.value(*input), self.value(*alpha), g)?;
                vec![(*input, dx), (*alpha, da)]
            }
            Op::Sigmoid { input } => {
                let y = node.value.as_ref().expect("sigmoid output kept for backward");
                vec![(*input, ops::sigmoid_backward(y, g)?)]
            }
            Op::MaxPool2 {
                input,
                argmax,
                input_shape,
            } => vec![(*input, ops::maxpool2_backward(input_shape, argmax, g))],
            Op::Upsample2 { input } => vec![(*input, ops::upsample2_backward(g)?)],
            Op::Concat { a, b, a_channels } => {
                let (ga, gb) = ops::split_channels(g, *a_channels)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sum { input } => {
                let s = g.item()?;
                vec![(*input, Tensor::full(self.value(*input).shape(), s))]
            }
            Op::Dot { input, weights } => {
                let s = g.item()?;
                let mut d = weights.clone();
                d.scale(s);
                vec![(*input, d)]
            }
            Op::SoftDice {
                pred,
                target,
                smooth,
            } => {
                let upstream = g.item()?;
                let p = self.value(*pred);
                vec![(*pred, soft_dice_grad(p, target, *smooth, upstream))]
            }
            Op::Mean { inputs } => {
                let s = g.item()? / inputs.len() as f64;
                inputs.iter().map(|&v| (v, Tensor::scalar(s))).collect()
            }
        })
    }
}

pub(crate) fn soft_dice_mean(pred: &Tensor, target: &Tensor, smooth: f64) -> f64 {
    soft_dice_terms(pred, target, smooth)
        .iter()
        .map(|t| 1.0 - t.numerator / t.denominator)
        .sum::<f64>()
        / pred.shape()[0] as f64
}

struct DiceTerms {
    numerator: f64,
    denominator: f64,
}

fn soft_dice_terms(pred: &Tensor, target: &Tensor, smooth: f64) -> Vec<DiceTerms> {
    let n = pred.shape()[0];
    let per = pred.numel() / n.max(1);
    (0..n)
        .map(|b| {
            let p = &pred.data()[b * per..(b + 1) * per];
            let t = &target.data()[b * per..(b + 1) * per];
            let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
            for (&pv, &tv) in p.iter().zip(t) {
                inter += pv * tv;
                sp += pv;
                st += tv;
            }
            DiceTerms {
                numerator: 2.0 * inter + smooth,
                denominator: sp + st + smooth,
            }
        })
        .collect()
}

fn soft_dice_grad(pred: &Tensor, target: &Tensor, smooth: f64, upstream: f64) -> Tensor {
    let n = pred.shape()[0];
    let per = pred.numel() / n.max(1);
    let terms = soft_dice_terms(pred, target, smooth);
    let mut d = Tensor::zeros(pred.shape());
    let scale = upstream / n as f64;
    for (b, t) in terms.iter().enumerate() {
        let den2 = t.denominator * t.denominator;
        let tg = &target.data()[b * per..(b + 1) * per];
        for (dv, &tv) in d.data_mut()[b * per..(b + 1) * per].iter_mut().zip(tg) {
            *dv = -scale * (2.0 * tv * t.denominator - t.numerator) / den2;
        }
    }
    d
}
