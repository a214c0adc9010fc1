//! Tape-based reverse-mode differentiation over whole-tensor operations.
//!
//! A forward pass records one node per operation. `backward` walks the tape
//! in reverse, accumulating gradients additively, so a value consumed twice
//! receives the sum of both path gradients. Parameters are named leaves,
//! deduplicated by name, which lets a recurrent cell reuse one parameter
//! node across timesteps.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::ops::concat::{concat_channels, concat_channels_backward};
use crate::ops::conv::{conv2d, conv2d_backward, ConvParams};
use crate::ops::norm::{group_norm, group_norm_backward, NormStats};
use crate::ops::pool::{adaptive_avg_pool, adaptive_avg_pool_backward};
use crate::ops::resize::{bilinear_resize, bilinear_resize_backward};
use crate::ops::softmax::{softmax_channels, softmax_channels_backward};
use crate::tensor::{
    activation, activation_deriv_from_output, elementwise, Activation, Elem, EwKind, Shape,
    Tensor,
};

/// Handle to a recorded value.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

enum Op {
    Leaf,
    Elementwise { a: Var, b: Var, kind: EwKind },
    Activation { x: Var, kind: Activation },
    Scale { x: Var, factor: Elem },
    Conv2d { x: Var, w: Var, b: Option<Var>, params: ConvParams },
    Resize { x: Var },
    Pool { x: Var },
    Concat { xs: Vec<Var> },
    GroupNorm { x: Var, scale: Var, shift: Var, groups: usize, stats: NormStats },
    Softmax { x: Var },
    /// Scalar node with a precomputed gradient w.r.t. one input (losses).
    ScalarWithGrad { x: Var, grad: Vec<Elem> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    grads: Vec<Option<Vec<Elem>>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an unnamed input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Record a named parameter leaf. Repeat calls with one name return the
    /// original node, so shared weights accumulate into a single gradient.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            debug_assert_eq!(self.nodes[v.0].value.shape(), value.shape());
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = elementwise(self.value(a), self.value(b), EwKind::Add)?;
        Ok(self.push(value, Op::Elementwise { a, b, kind: EwKind::Add }))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = elementwise(self.value(a), self.value(b), EwKind::Hadamard)?;
        Ok(self.push(value, Op::Elementwise { a, b, kind: EwKind::Hadamard }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = activation(self.value(x), kind);
        self.push(value, Op::Activation { x, kind })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn scale(&mut self, x: Var, factor: Elem) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v *= factor;
        }
        value.clear_grad();
        self.push(value, Op::Scale { x, factor })
    }

    /// Mean of same-shaped values.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = match xs.first() {
            Some(&v) => v,
            None => return Err(Error::Arg("mean_of: empty list".into())),
        };
        for &v in &xs[1..] {
            acc = self.add(acc, v)?;
        }
        Ok(self.scale(acc, 1.0 / xs.len() as Elem))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        params: ConvParams,
    ) -> Result<Var> {
        let value = conv2d(
            self.value(x),
            self.value(w),
            b.map(|bv| self.value(bv)),
            params,
        )?;
        Ok(self.push(value, Op::Conv2d { x, w, b, params }))
    }

    pub fn bilinear_resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let value = bilinear_resize(self.value(x), h, w)?;
        Ok(self.push(value, Op::Resize { x }))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, bin_h: usize, bin_w: usize) -> Result<Var> {
        let value = adaptive_avg_pool(self.value(x), bin_h, bin_w)?;
        Ok(self.push(value, Op::Pool { x }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let value = concat_channels(&tensors)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        groups: usize,
        eps: Elem,
    ) -> Result<Var> {
        let (value, stats) =
            group_norm(self.value(x), groups, self.value(scale), self.value(shift), eps)?;
        Ok(self.push(value, Op::GroupNorm { x, scale, shift, groups, stats }))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let value = softmax_channels(self.value(x))?;
        Ok(self.push(value, Op::Softmax { x }))
    }

    /// Scalar node whose gradient with respect to `x` was computed by the
    /// caller at forward time (loss functions are piecewise closed-form).
    pub fn scalar_with_grad(&mut self, x: Var, value: Elem, grad: Vec<Elem>) -> Result<Var> {
        if grad.len() != self.value(x).data().len() {
            return shape_err("scalar_with_grad: gradient length mismatch");
        }
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![value])?;
        Ok(self.push(t, Op::ScalarWithGrad { x, grad }))
    }

    /// Scalar value of a (1,1,1,1) node.
    pub fn scalar(&self, v: Var) -> Elem {
        self.nodes[v.0].value.data()[0]
    }

    fn accumulate(grads: &mut [Option<Vec<Elem>>], v: Var, delta: &[Elem]) {
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse sweep from `output` seeded with `output_grad`. Gradients of
    /// every participating node become readable through `grad`/`param_grad`.
    pub fn backward(&mut self, output: Var, output_grad: &Tensor) -> Result<()> {
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::State(
                "backward before forward: no recorded computation for output".into(),
            ));
        }
        if output_grad.shape() != self.nodes[output.0].value.shape() {
            return shape_err(format!(
                "backward: output gradient {} does not match output {}",
                output_grad.shape(),
                self.nodes[output.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<Elem>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(output_grad.data().to_vec());

        for id in (0..=output.0).rev() {
            // every node keeps its gradient readable after the sweep
            let Some(gout) = grads[id].clone() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => continue,
                Op::Elementwise { a, b, kind } => match kind {
                    EwKind::Add => {
                        Self::accumulate(&mut grads, *a, &gout);
                        Self::accumulate(&mut grads, *b, &gout);
                    }
                    EwKind::Hadamard => {
                        let da: Vec<Elem> = self.nodes[b.0]
                            .value
                            .data()
                            .iter()
                            .zip(&gout)
                            .map(|(bv, g)| bv * g)
                            .collect();
                        let db: Vec<Elem> = self.nodes[a.0]
                            .value
                            .data()
                            .iter()
                            .zip(&gout)
                            .map(|(av, g)| av * g)
                            .collect();
                        Self::accumulate(&mut grads, *a, &da);
                        Self::accumulate(&mut grads, *b, &db);
                    }
                },
                Op::Activation { x, kind } => {
                    let dx: Vec<Elem> = node
                        .value
                        .data()
                        .iter()
                        .zip(&gout)
                        .map(|(&y, g)| activation_deriv_from_output(*kind, y) * g)
                        .collect();
                    Self::accumulate(&mut grads, *x, &dx);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<Elem> = gout.iter().map(|g| g * factor).collect();
                    Self::accumulate(&mut grads, *x, &dx);
                }
                Op::Conv2d { x, w, b, params } => {
                    let gt = Tensor::from_vec(node.value.shape(), gout)?;
                    let (dx, dw, db) = conv2d_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        b.is_some(),
                        *params,
                        &gt,
                    )?;
                    Self::accumulate(&mut grads, *x, dx.data());
                    Self::accumulate(&mut grads, *w, dw.data());
                    if let (Some(bv), Some(db)) = (b, db) {
                        Self::accumulate(&mut grads, *bv, db.data());
                    }
                }
                Op::Resize { x } => {
                    let gt = Tensor::from_vec(node.value.shape(), gout)?;
                    let dx = bilinear_resize_backward(self.nodes[x.0].value.shape(), &gt)?;
                    Self::accumulate(&mut grads, *x, dx.data());
                }
                Op::Pool { x } => {
                    let gt = Tensor::from_vec(node.value.shape(), gout)?;
                    let dx = adaptive_avg_pool_backward(self.nodes[x.0].value.shape(), &gt)?;
                    Self::accumulate(&mut grads, *x, dx.data());
                }
                Op::Concat { xs } => {
                    let shapes: Vec<Shape> =
                        xs.iter().map(|v| self.nodes[v.0].value.shape()).collect();
                    let gt = Tensor::from_vec(node.value.shape(), gout)?;
                    let parts = concat_channels_backward(&shapes, &gt)?;
                    for (v, part) in xs.iter().zip(parts) {
                        Self::accumulate(&mut grads, *v, part.data());
                    }
                }
                Op::GroupNorm { x, scale, shift, groups, stats } => {
                    let gt = Tensor::from_vec(node.value.shape(), gout)?;
                    let (dx, dgamma, dbeta) = group_norm_backward(
                        &self.nodes[x.0].value,
                        *groups,
                        &self.nodes[scale.0].value,
                        stats,
                        &gt,
                    )?;
                    Self::accumulate(&mut grads, *x, dx.data());
                    Self::accumulate(&mut grads, *scale, dgamma.data());
                    Self::accumulate(&mut grads, *shift, dbeta.data());
                }
                Op::Softmax { x } => {
                    let gt = Tensor::from_vec(node.value.shape(), gout)?;
                    let dx = softmax_channels_backward(&node.value, &gt)?;
                    Self::accumulate(&mut grads, *x, dx.data());
                }
                Op::ScalarWithGrad { x, grad } => {
                    let upstream = gout[0];
                    let dx: Vec<Elem> = grad.iter().map(|g| g * upstream).collect();
                    Self::accumulate(&mut grads, *x, &dx);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of a node from the most recent backward pass.
    pub fn grad(&self, v: Var) -> Option<&[Elem]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn param_grad(&self, name: &str) -> Option<&[Elem]> {
        self.params.get(name).and_then(|&v| self.grad(v))
    }
}
