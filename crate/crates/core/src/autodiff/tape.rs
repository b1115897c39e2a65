//! Reverse-mode tape and the eager (inference) executor.
//!
//! Network code is written once against [`Graph`]; [`Tape`] records every
//! op for backpropagation, while [`Eager`] evaluates immediately and lets
//! intermediate tensors drop as soon as they go out of scope.

use std::sync::Arc;

use super::kernels::{self, ConvGeometry};
use super::{ConvParams, ParamStore, Real, Shape, Tensor};
use crate::error::{Error, Result};

/// A fixed, non-trainable 64×64 matrix used by [`Graph::fixed_linear_1x1`].
pub type FixedKernel<T> = Arc<[T]>;

/// Operations the network needs, independent of execution strategy.
pub trait Graph<T: Real> {
    type Value;

    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv2d(&mut self, params: &ParamStore<T>, x: &Self::Value, conv: &ConvParams) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn qru(&mut self, x: &Self::Value) -> Self::Value;
    fn concat(&mut self, xs: &[&Self::Value]) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, s: T) -> Self::Value;
    /// Applies `kernels[n]` (row-major 64×64) to batch item `n`.
    fn fixed_linear_1x1(&mut self, x: &Self::Value, kernels: &[FixedKernel<T>]) -> Result<Self::Value>;
    fn mse_loss(&mut self, pred: &Self::Value, target: &Self::Value) -> Result<Self::Value>;

    fn shape(&self, v: &Self::Value) -> Shape {
        self.tensor(v).shape()
    }
}

fn check_conv<T: Real>(x: &Tensor<T>, params: &ParamStore<T>, conv: &ConvParams) -> Result<ConvGeometry> {
    if x.shape().c != conv.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            conv.in_channels,
            x.shape().c
        )));
    }
    if conv.kernel % 2 == 0 {
        return Err(Error::invalid(format!("even kernel size {}", conv.kernel)));
    }
    let wlen = params.get(conv.weight).value.len();
    if wlen != conv.out_channels * conv.in_channels * conv.kernel * conv.kernel {
        return Err(Error::shape("conv weight size does not match its geometry"));
    }
    Ok(geometry(conv))
}

fn geometry(conv: &ConvParams) -> ConvGeometry {
    ConvGeometry {
        in_channels: conv.in_channels,
        out_channels: conv.out_channels,
        kernel: conv.kernel,
        dilation: conv.dilation,
    }
}

fn check_concat<T: Real>(xs: &[&Tensor<T>]) -> Result<()> {
    let first = xs.first().ok_or_else(|| Error::invalid("concat of nothing"))?.shape();
    for t in xs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(format!("concat {s} with {first}")));
        }
    }
    Ok(())
}

fn check_same(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn check_translate<T: Real>(x: &Tensor<T>, kernels: &[FixedKernel<T>]) -> Result<()> {
    let s = x.shape();
    if s.c != 64 {
        return Err(Error::shape(format!("translation needs 64 channels, got {}", s.c)));
    }
    if kernels.len() != s.n {
        return Err(Error::shape(format!("{} kernels for a batch of {}", kernels.len(), s.n)));
    }
    if kernels.iter().any(|k| k.len() != 64 * 64) {
        return Err(Error::shape("translation kernel is not 64x64"));
    }
    Ok(())
}

fn kernel_refs<T>(kernels: &[FixedKernel<T>]) -> Vec<&[T]> {
    kernels.iter().map(|k| &k[..]).collect()
}

/// Immediate evaluation without gradient bookkeeping.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Real> Graph<T> for Eager {
    type Value = Tensor<T>;

    fn tensor<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, params: &ParamStore<T>, x: &Tensor<T>, conv: &ConvParams) -> Result<Tensor<T>> {
        let g = check_conv(x, params, conv)?;
        Ok(kernels::conv2d_forward(x, &params.get(conv.weight).value, &params.get(conv.bias).value, &g))
    }

    fn relu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        kernels::relu_forward(x)
    }

    fn qru(&mut self, x: &Tensor<T>) -> Tensor<T> {
        kernels::qru_forward(x)
    }

    fn concat(&mut self, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_concat(xs)?;
        Ok(kernels::concat_forward(xs))
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        check_same(a.shape(), b.shape(), "add")?;
        let mut out = a.clone();
        out.data_mut().iter_mut().zip(b.data()).for_each(|(o, &v)| *o += v);
        Ok(out)
    }

    fn scale(&mut self, x: &Tensor<T>, s: T) -> Tensor<T> {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        out
    }

    fn fixed_linear_1x1(&mut self, x: &Tensor<T>, kernels: &[FixedKernel<T>]) -> Result<Tensor<T>> {
        check_translate(x, kernels)?;
        Ok(kernels::translate_forward(x, &kernel_refs(kernels)))
    }

    fn mse_loss(&mut self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        check_same(pred.shape(), target.shape(), "mse")?;
        Ok(Tensor::full(kernels::scalar_shape(), kernels::mse_forward(pred, target)))
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: usize, conv: ConvParams },
    Relu { x: usize },
    Qru { x: usize },
    Concat { xs: Vec<usize> },
    Add { a: usize, b: usize },
    Scale { x: usize, s: T },
    Translate { x: usize, kernels: Vec<FixedKernel<T>> },
    Mse { pred: usize, target: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(value.is_finite(), "non-finite activation in {}", op_name(&op));
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Backpropagates from a scalar node, accumulating parameter gradients
    /// into `params` and leaf gradients into the tape.
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore<T>) -> Result<()> {
        if self.nodes[loss.0].value.shape() != kernels::scalar_shape() {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let count = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..count).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(kernels::scalar_shape(), T::one()));
        self.leaf_grads = (0..count).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(dout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => self.leaf_grads[i] = Some(dout),
                Op::Conv { x, conv } => {
                    let input = &self.nodes[*x].value;
                    let g = geometry(conv);
                    let weight = params.get(conv.weight).value.clone();
                    let mut dbias = std::mem::take(&mut params.get_mut(conv.bias).grad);
                    let mut dweight = std::mem::take(&mut params.get_mut(conv.weight).grad);
                    let dx = accum(&mut grads, *x, input.shape());
                    kernels::conv2d_backward(input, &weight, &g, &dout, &mut dweight, &mut dbias, Some(dx));
                    params.get_mut(conv.weight).grad = dweight;
                    params.get_mut(conv.bias).grad = dbias;
                }
                Op::Relu { x } => {
                    let dx = accum(&mut grads, *x, node.value.shape());
                    kernels::relu_backward(&node.value, &dout, dx);
                }
                Op::Qru { x } => {
                    let dx = accum(&mut grads, *x, node.value.shape());
                    kernels::qru_backward(&node.value, &dout, dx);
                }
                Op::Concat { xs } => {
                    let mut offset = 0;
                    for &x in xs {
                        let shape = self.nodes[x].value.shape();
                        let len = shape.numel();
                        let dx = accum(&mut grads, x, shape);
                        dx.data_mut().iter_mut().zip(&dout.data()[offset..offset + len]).for_each(|(d, &g)| *d += g);
                        offset += len;
                    }
                }
                Op::Add { a, b } => {
                    for &x in [a, b] {
                        let dx = accum(&mut grads, x, dout.shape());
                        dx.data_mut().iter_mut().zip(dout.data()).for_each(|(d, &g)| *d += g);
                    }
                }
                Op::Scale { x, s } => {
                    let dx = accum(&mut grads, *x, dout.shape());
                    dx.data_mut().iter_mut().zip(dout.data()).for_each(|(d, &g)| *d += g * *s);
                }
                Op::Translate { x, kernels: ks } => {
                    let transposed: Vec<Vec<T>> = ks.iter().map(|k| kernels::transpose_64(k)).collect();
                    let refs: Vec<&[T]> = transposed.iter().map(|k| &k[..]).collect();
                    let back = kernels::translate_forward(&dout, &refs);
                    let dx = accum(&mut grads, *x, dout.shape());
                    dx.data_mut().iter_mut().zip(back.data()).for_each(|(d, &g)| *d += g);
                }
                Op::Mse { pred, target } => {
                    let dl = dout.data()[0];
                    let (p, t) = (&self.nodes[*pred].value, &self.nodes[*target].value);
                    let shape = p.shape();
                    let dp = accum(&mut grads, *pred, shape);
                    kernels::mse_backward(p, t, dl, dp);
                    let dt = accum(&mut grads, *target, shape);
                    kernels::mse_backward(t, p, dl, dt);
                }
            }
        }
        Ok(())
    }
}

fn accum<T: Real>(grads: &mut [Option<Tensor<T>>], i: usize, shape: Shape) -> &mut Tensor<T> {
    grads[i].get_or_insert_with(|| Tensor::zeros(shape))
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv { .. } => "conv2d",
        Op::Relu { .. } => "relu",
        Op::Qru { .. } => "qru",
        Op::Concat { .. } => "concat",
        Op::Add { .. } => "add",
        Op::Scale { .. } => "scale",
        Op::Translate { .. } => "fixed_linear_1x1",
        Op::Mse { .. } => "mse_loss",
    }
}

impl<T: Real> Graph<T> for Tape<T> {
    type Value = Var;

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn conv2d(&mut self, params: &ParamStore<T>, x: &Var, conv: &ConvParams) -> Result<Var> {
        let input = &self.nodes[x.0].value;
        let g = check_conv(input, params, conv)?;
        let out = kernels::conv2d_forward(input, &params.get(conv.weight).value, &params.get(conv.bias).value, &g);
        Ok(self.push(out, Op::Conv { x: x.0, conv: *conv }))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let out = kernels::relu_forward(&self.nodes[x.0].value);
        self.push(out, Op::Relu { x: x.0 })
    }

    fn qru(&mut self, x: &Var) -> Var {
        let out = kernels::qru_forward(&self.nodes[x.0].value);
        self.push(out, Op::Qru { x: x.0 })
    }

    fn concat(&mut self, xs: &[&Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|v| &self.nodes[v.0].value).collect();
        check_concat(&tensors)?;
        let out = kernels::concat_forward(&tensors);
        Ok(self.push(out, Op::Concat { xs: xs.iter().map(|v| v.0).collect() }))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = Eager.add(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    fn scale(&mut self, x: &Var, s: T) -> Var {
        let out = Eager.scale(&self.nodes[x.0].value, s);
        self.push(out, Op::Scale { x: x.0, s })
    }

    fn fixed_linear_1x1(&mut self, x: &Var, kernels: &[FixedKernel<T>]) -> Result<Var> {
        let out = Eager.fixed_linear_1x1(&self.nodes[x.0].value, kernels)?;
        Ok(self.push(out, Op::Translate { x: x.0, kernels: kernels.to_vec() }))
    }

    fn mse_loss(&mut self, pred: &Var, target: &Var) -> Result<Var> {
        let out = Eager.mse_loss(&self.nodes[pred.0].value, &self.nodes[target.0].value)?;
        Ok(self.push(out, Op::Mse { pred: pred.0, target: target.0 }))
    }
}
