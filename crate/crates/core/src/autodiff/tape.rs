//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] records executed ops in order; [`Tape::backward`] walks the list
//! once in reverse, accumulating gradients. Gradients are only computed for
//! inputs transitively marked as parameters, so frozen weights (loss heads,
//! targets) cost nothing on the way back.

use crate::error::{Error, Result};

use super::kernels::{self, BnSaved, Conv2dSpec, DistillSaved};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

enum Op {
    Leaf,
    Conv2d { x: VarId, w: VarId, b: VarId, spec: Conv2dSpec },
    PadTimeEdge { x: VarId, before: usize, after: usize },
    MaxPoolTime { x: VarId, k: usize, stride: usize },
    AvgPoolAllTime { x: VarId, t: usize },
    BatchNorm { x: VarId, gamma: VarId, beta: VarId, saved: BnSaved, train: bool },
    Relu { x: VarId },
    Linear { x: VarId, w: VarId, b: VarId },
    Reshape { x: VarId },
    SoftmaxT { x: VarId, temp: f64 },
    UnitNormalize { x: VarId, norms: Vec<f64> },
    L1Diff { a: VarId, b: VarId },
    L2SqDiff { a: VarId, b: VarId },
    Distill { pred: VarId, temp: f64, saved: DistillSaved },
    Add { a: VarId, b: VarId },
    Scale { a: VarId, c: f64 },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> VarId {
        self.nodes.push(Node { value, needs_grad, op });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant input: no gradient will be computed for it.
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(value, false, Op::Leaf)
    }

    /// A trainable input: its gradient is produced by `backward`.
    pub fn param(&mut self, value: Tensor) -> VarId {
        self.push(value, true, Op::Leaf)
    }

    pub fn conv2d(&mut self, x: VarId, w: VarId, b: VarId, spec: Conv2dSpec) -> Result<VarId> {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), &spec)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, needs, Op::Conv2d { x, w, b, spec }))
    }

    pub fn pad_time_edge(&mut self, x: VarId, before: usize, after: usize) -> Result<VarId> {
        let out = kernels::pad_time_edge_forward(self.value(x), before, after)?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::PadTimeEdge { x, before, after }))
    }

    pub fn maxpool_time(&mut self, x: VarId, k: usize, stride: usize) -> Result<VarId> {
        let out = kernels::maxpool_time_forward(self.value(x), k, stride)?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::MaxPoolTime { x, k, stride }))
    }

    pub fn avgpool_all_time(&mut self, x: VarId) -> Result<VarId> {
        let t = self.value(x).shape()[2];
        let out = kernels::avgpool_all_time_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::AvgPoolAllTime { x, t }))
    }

    /// Train-mode batch norm. Returns the output node plus the biased batch
    /// statistics so the caller can update running averages.
    pub fn batchnorm_train(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: f64,
    ) -> Result<(VarId, Vec<f64>, Vec<f64>)> {
        let (out, saved) =
            kernels::batchnorm_train_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let stats = (saved.mean.clone(), saved.var.clone());
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(out, needs, Op::BatchNorm { x, gamma, beta, saved, train: true });
        Ok((id, stats.0, stats.1))
    }

    /// Eval-mode batch norm with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<VarId> {
        let (out, saved) = kernels::batchnorm_eval_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            eps,
        )?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, needs, Op::BatchNorm { x, gamma, beta, saved, train: false }))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let out = kernels::relu_forward(self.value(x));
        let needs = self.needs(x);
        self.push(out, needs, Op::Relu { x })
    }

    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let out = kernels::linear_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, needs, Op::Linear { x, w, b }))
    }

    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        let out = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::Reshape { x }))
    }

    pub fn softmax_t(&mut self, x: VarId, temp: f64) -> Result<VarId> {
        let out = kernels::softmax_t_forward(self.value(x), temp)?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::SoftmaxT { x, temp }))
    }

    pub fn unit_normalize(&mut self, x: VarId) -> Result<VarId> {
        let (out, norms) = kernels::unit_normalize_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(out, needs, Op::UnitNormalize { x, norms }))
    }

    pub fn l1_diff(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = kernels::l1_diff_forward(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::L1Diff { a, b }))
    }

    pub fn l2_sq_diff(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = kernels::l2_sq_diff_forward(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::L2SqDiff { a, b }))
    }

    /// Distillation cross-entropy; the target side is detached by definition.
    pub fn distill_loss(&mut self, target: VarId, pred: VarId, temp: f64) -> Result<VarId> {
        let (out, saved) = kernels::distill_forward(self.value(target), self.value(pred), temp)?;
        let needs = self.needs(pred);
        Ok(self.push(out, needs, Op::Distill { pred, temp, saved }))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = kernels::add_forward(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Add { a, b }))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let out = kernels::scale_forward(self.value(a), c);
        let needs = self.needs(a);
        self.push(out, needs, Op::Scale { a, c })
    }

    /// Reverse pass from a scalar root. Visits each node exactly once in
    /// reverse execution order.
    pub fn backward(&self, root: VarId) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let g = match grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, spec } => {
                    let need = (self.needs(*x), self.needs(*w), self.needs(*b));
                    let (dx, dw, db) = kernels::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        self.value(*b),
                        spec,
                        &g,
                        need,
                    )?;
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, *w, dw)?;
                    }
                    if let Some(db) = db {
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::PadTimeEdge { x, before, after } => {
                    let dx = kernels::pad_time_edge_backward(self.value(*x).shape(), *before, *after, &g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::MaxPoolTime { x, k, stride } => {
                    let dx = kernels::maxpool_time_backward(self.value(*x), *k, *stride, &g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::AvgPoolAllTime { x, t } => {
                    let dx = kernels::avgpool_all_time_backward(*t, self.value(*x).shape(), &g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::BatchNorm { x, gamma, beta, saved, train } => {
                    let (dx, dgamma, dbeta) = if *train {
                        kernels::batchnorm_train_backward(self.value(*x), self.value(*gamma), saved, &g)?
                    } else {
                        kernels::batchnorm_eval_backward(self.value(*x), self.value(*gamma), saved, &g)?
                    };
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if self.needs(*gamma) {
                        accumulate(&mut grads, *gamma, dgamma)?;
                    }
                    if self.needs(*beta) {
                        accumulate(&mut grads, *beta, dbeta)?;
                    }
                }
                Op::Relu { x } => {
                    let dx = kernels::relu_backward(&self.nodes[idx].value, &g);
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Linear { x, w, b } => {
                    let need = (self.needs(*x), self.needs(*w), self.needs(*b));
                    let (dx, dw, db) =
                        kernels::linear_backward(self.value(*x), self.value(*w), &g, need)?;
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, *w, dw)?;
                    }
                    if let Some(db) = db {
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::Reshape { x } => {
                    let dx = g.reshape(self.value(*x).shape())?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::SoftmaxT { x, temp } => {
                    let dx = kernels::softmax_t_backward(&self.nodes[idx].value, *temp, &g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::UnitNormalize { x, norms } => {
                    let dx = kernels::unit_normalize_backward(&self.nodes[idx].value, norms, &g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::L1Diff { a, b } => {
                    let (da, db) = kernels::l1_diff_backward(self.value(*a), self.value(*b), g.item())?;
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::L2SqDiff { a, b } => {
                    let (da, db) =
                        kernels::l2_sq_diff_backward(self.value(*a), self.value(*b), g.item())?;
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::Distill { pred, temp, saved } => {
                    let db = kernels::distill_backward(saved, *temp, g.item())?;
                    accumulate(&mut grads, *pred, db)?;
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Scale { a, c } => {
                    let da = kernels::scale_forward(&g, *c);
                    accumulate(&mut grads, *a, da)?;
                }
            }
            // Interior gradients are not needed once propagated; keep leaves.
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: VarId, contribution: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        slot @ None => *slot = Some(contribution),
        Some(existing) => {
            let summed = kernels::add_forward(existing, &contribution)?;
            *existing = summed;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn linear_chain_gradient() {
        // f(x) = 3 * sum((x - 0)^2) / 1 with x = [1, 2]: df/dx = 6x
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[2]));
        let sq = tape.l2_sq_diff(x, zero).unwrap();
        let y = tape.scale(sq, 3.0);
        let mut grads = tape.backward(y).unwrap();
        let gx = grads.take(x).unwrap();
        assert_eq!(gx.data(), &[6.0, 12.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let c = tape.constant(Tensor::new(vec![2], vec![5.0, 5.0]).unwrap());
        let loss = tape.l2_sq_diff(x, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn shared_node_gradients_accumulate() {
        // f = sum(x^2) + sum(x^2)
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, -3.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[2]));
        let a = tape.l2_sq_diff(x, zero).unwrap();
        let b = tape.l2_sq_diff(x, zero).unwrap();
        let sum = tape.add(a, b).unwrap();
        let mut grads = tape.backward(sum).unwrap();
        assert_eq!(grads.take(x).unwrap().data(), &[4.0, -12.0]);
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        use rand::Rng;
        let run = || {
            let mut rng = crate::rng::stream(3, "tape-replay", &[]);
            let x = Tensor::from_fn(&[2, 3, 8, 5], |_| rng.gen_range(-1.0..1.0));
            let w = Tensor::from_fn(&[4, 3, 2, 2], |_| rng.gen_range(-1.0..1.0));
            let b = Tensor::from_fn(&[4], |_| rng.gen_range(-1.0..1.0));
            let mut tape = Tape::new();
            let xi = tape.constant(x);
            let wi = tape.param(w);
            let bi = tape.param(b);
            let conv = tape
                .conv2d(xi, wi, bi, Conv2dSpec { stride: (1, 1), pad: (0, 0, 0, 0) })
                .unwrap();
            let act = tape.relu(conv);
            let flat_len = tape.value(act).numel();
            let flat = tape.reshape(act, &[1, flat_len]).unwrap();
            let target = tape.constant(Tensor::zeros(&[1, flat_len]));
            let loss = tape.l2_sq_diff(flat, target).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).item(),
                grads.take(wi).unwrap().data().to_vec(),
                grads.take(bi).unwrap().data().to_vec(),
            )
        };
        let (l1, gw1, gb1) = run();
        let (l2, gw2, gb2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gw1, gw2);
        assert_eq!(gb1, gb2);
    }
}
