//! Reverse-mode differentiation over the network operations.
//!
//! Network code is written once against [`Graph`]. [`Tape`] records every
//! operation so [`Tape::backward`] can replay it in reverse; [`Eval`] only
//! computes values and drops intermediates as soon as the caller does.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{self, BatchStats, BnSaved, RunningStats};
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

/// Batch-norm behaviour for one call.
#[derive(Debug, Clone, Copy)]
pub enum Norm<'a> {
    /// Normalize with batch statistics; the statistics are returned so the
    /// caller can update its running averages.
    Batch,
    /// Normalize with stored running statistics.
    Running(&'a RunningStats),
}

/// Operations available to network definitions.
pub trait Graph {
    type Value: Clone;

    /// A constant input that does not need a gradient.
    fn input(&mut self, t: Tensor) -> Self::Value;
    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose_conv2(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn max_pool2(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        norm: Norm<'_>,
    ) -> Result<(Self::Value, Option<BatchStats>)>;
    /// Training-time inverted dropout.
    fn dropout(&mut self, x: &Self::Value, p: f32, rng: &mut RngState) -> Result<Self::Value>;
    fn concat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn abs_diff(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

/// Forward-only evaluation.
#[derive(Debug, Default)]
pub struct Eval;

impl Graph for Eval {
    type Value = Arc<Tensor>;

    fn input(&mut self, t: Tensor) -> Arc<Tensor> {
        Arc::new(t)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Arc<Tensor> {
        Arc::new(store.get(id).clone())
    }

    fn value<'a>(&'a self, v: &'a Arc<Tensor>) -> &'a Tensor {
        v
    }

    fn conv2d(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::conv2d(x, w, b).map(Arc::new)
    }

    fn transpose_conv2(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::transpose_conv2(x, w, b).map(Arc::new)
    }

    fn max_pool2(&mut self, x: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::max_pool2(x).map(|(y, _)| Arc::new(y))
    }

    fn relu(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(ops::relu(x))
    }

    fn batch_norm(
        &mut self,
        x: &Arc<Tensor>,
        gamma: &Arc<Tensor>,
        beta: &Arc<Tensor>,
        norm: Norm<'_>,
    ) -> Result<(Arc<Tensor>, Option<BatchStats>)> {
        match norm {
            Norm::Batch => {
                let (y, _, stats) = ops::batch_norm_train(x, gamma, beta)?;
                Ok((Arc::new(y), Some(stats)))
            }
            Norm::Running(r) => Ok((Arc::new(ops::batch_norm_eval(x, gamma, beta, r)?), None)),
        }
    }

    fn dropout(&mut self, x: &Arc<Tensor>, p: f32, rng: &mut RngState) -> Result<Arc<Tensor>> {
        let mask = ops::dropout_mask(x.len(), p, rng)?;
        Ok(Arc::new(ops::apply_mask(x, &mask)))
    }

    fn concat(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::concat_channels(a, b).map(Arc::new)
    }

    fn abs_diff(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        ops::abs_diff(a, b).map(Arc::new)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
    },
    TransposeConv2 {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Relu {
        x: Var,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    AbsDiff {
        a: Var,
        b: Var,
    },
    WeightedLogLoss {
        logits: Var,
        labels: Vec<u8>,
        weights: [f32; 2],
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Deliberate corruption of one backward rule, used to prove that the
/// gradient checker catches a broken kernel.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    ConvBackward,
}

/// Records operations for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Tape {
            fault: Some(fault),
            ..Self::default()
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// An input whose gradient is wanted.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mean weighted cross-entropy over all pixels; see
    /// [`ops::weighted_logloss`]. The result is a `(1, 1, 1, 1)` scalar.
    pub fn weighted_logloss(&mut self, logits: Var, labels: &[u8], weights: [f32; 2]) -> Result<Var> {
        let (loss, probs) = ops::weighted_logloss(&self.nodes[logits.0].value, labels, weights)?;
        let value = Tensor::full(Shape::new(1, 1, 1, 1), loss);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            value,
            Op::WeightedLogLoss {
                logits,
                labels: labels.to_vec(),
                weights,
                probs,
            },
            rg,
        ))
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let v = &self.nodes[output.0].value;
        if v.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {}",
                v.shape()
            )));
        }
        self.backward_with(output, Tensor::full(v.shape(), 1.0))
    }

    /// Backpropagates an explicit output gradient `seed`.
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.nodes[output.0].value.shape() {
            return Err(Error::Shape(format!(
                "seed gradient {} does not match output {}",
                seed.shape(),
                self.nodes[output.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            for (parent, pg) in self.local_grads(node, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        match &node.op {
            Op::Leaf | Op::Param => Vec::new(),
            Op::Conv2d { x, w, b } => {
                let (mut dx, dw, db) = ops::conv2d_backward(self.val(*x), self.val(*w), g);
                if self.fault == Some(Fault::ConvBackward) {
                    dx.data_mut().iter_mut().for_each(|v| *v *= 1.5);
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::TransposeConv2 { x, w, b } => {
                let (dx, dw, db) = ops::transpose_conv2_backward(self.val(*x), self.val(*w), g);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::MaxPool2 { x, argmax } => {
                vec![(*x, ops::max_pool2_backward(g, argmax, self.val(*x).shape()))]
            }
            Op::Relu { x } => vec![(*x, ops::relu_backward(g, &node.value))],
            Op::BatchNormTrain { x, gamma, beta, saved } => {
                let (dx, dg, db) = ops::batch_norm_train_backward(g, saved, self.val(*gamma));
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                running,
            } => {
                let xv = self.val(*x);
                let s = xv.shape();
                let (scale, _) = ops::eval_affine(self.val(*gamma), self.val(*beta), running);
                let mut dx = g.clone();
                let mut dg = vec![0.0f64; s.c];
                let mut db = vec![0.0f64; s.c];
                for (i, (gp, xp)) in dx
                    .data_mut()
                    .chunks_mut(s.plane())
                    .zip(xv.data().chunks(s.plane()))
                    .enumerate()
                {
                    let c = i % s.c;
                    let istd = 1.0 / (running.var[c] + ops::BN_EPS).sqrt();
                    for (gv, &xv) in gp.iter_mut().zip(xp) {
                        dg[c] += (*gv * (xv - running.mean[c]) * istd) as f64;
                        db[c] += *gv as f64;
                        *gv *= scale[c];
                    }
                }
                let p = Shape::new(1, s.c, 1, 1);
                let to_t =
                    |v: Vec<f64>| Tensor::from_vec(p, v.into_iter().map(|x| x as f32).collect()).expect("affine shape");
                vec![(*x, dx), (*gamma, to_t(dg)), (*beta, to_t(db))]
            }
            Op::Dropout { x, mask } => vec![(*x, ops::apply_mask(g, mask))],
            Op::Concat { a, b } => {
                let (da, db) = ops::split_channels(g, self.val(*a).shape().c);
                vec![(*a, da), (*b, db)]
            }
            Op::AbsDiff { a, b } => {
                let da = ops::abs_diff_backward(g, self.val(*a), self.val(*b));
                let mut db = da.clone();
                db.data_mut().iter_mut().for_each(|v| *v = -*v);
                vec![(*a, da), (*b, db)]
            }
            Op::WeightedLogLoss {
                logits,
                labels,
                weights,
                probs,
            } => vec![(
                *logits,
                ops::weighted_logloss_backward(probs, labels, *weights, g.data()[0]),
            )],
        }
    }
}

impl Graph for Tape {
    type Value = Var;

    fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Repeated requests for the same parameter return the same node, so
    /// gradients from every use accumulate in one place.
    fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let y = ops::conv2d(self.val(*x), self.val(*w), self.val(*b))?;
        let rg = self.needs(&[*x, *w, *b]);
        Ok(self.push(y, Op::Conv2d { x: *x, w: *w, b: *b }, rg))
    }

    fn transpose_conv2(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let y = ops::transpose_conv2(self.val(*x), self.val(*w), self.val(*b))?;
        let rg = self.needs(&[*x, *w, *b]);
        Ok(self.push(y, Op::TransposeConv2 { x: *x, w: *w, b: *b }, rg))
    }

    fn max_pool2(&mut self, x: &Var) -> Result<Var> {
        let (y, argmax) = ops::max_pool2(self.val(*x))?;
        let rg = self.needs(&[*x]);
        Ok(self.push(y, Op::MaxPool2 { x: *x, argmax }, rg))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let y = ops::relu(self.val(*x));
        let rg = self.needs(&[*x]);
        self.push(y, Op::Relu { x: *x }, rg)
    }

    fn batch_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, norm: Norm<'_>) -> Result<(Var, Option<BatchStats>)> {
        let rg = self.needs(&[*x, *gamma, *beta]);
        let (x, gamma, beta) = (*x, *gamma, *beta);
        match norm {
            Norm::Batch => {
                let (y, saved, stats) = ops::batch_norm_train(self.val(x), self.val(gamma), self.val(beta))?;
                let v = self.push(y, Op::BatchNormTrain { x, gamma, beta, saved }, rg);
                Ok((v, Some(stats)))
            }
            Norm::Running(r) => {
                let y = ops::batch_norm_eval(self.val(x), self.val(gamma), self.val(beta), r)?;
                let op = Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    running: r.clone(),
                };
                Ok((self.push(y, op, rg), None))
            }
        }
    }

    fn dropout(&mut self, x: &Var, p: f32, rng: &mut RngState) -> Result<Var> {
        let mask = ops::dropout_mask(self.val(*x).len(), p, rng)?;
        let y = ops::apply_mask(self.val(*x), &mask);
        let rg = self.needs(&[*x]);
        Ok(self.push(y, Op::Dropout { x: *x, mask }, rg))
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::concat_channels(self.val(*a), self.val(*b))?;
        let rg = self.needs(&[*a, *b]);
        Ok(self.push(y, Op::Concat { a: *a, b: *b }, rg))
    }

    fn abs_diff(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::abs_diff(self.val(*a), self.val(*b))?;
        let rg = self.needs(&[*a, *b]);
        Ok(self.push(y, Op::AbsDiff { a: *a, b: *b }, rg))
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, summed over every place it was used.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }
}
