use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named parameter tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

/// Ordered parameter collection. Insertion order is the serialization order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if value.len() != numel {
            return Err(Error::shape(format!("parameter `{name}`: {} values for shape {shape:?}", value.len())));
        }
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param { name, shape, grad: vec![T::zero(); numel], value, trainable });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::from_f64(x.as_f64()).expect("finite")).collect();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: conv(&p.value),
                    grad: conv(&p.grad),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

/// Handles and hyperparameters of one stride-1, same-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvParams {
    /// Registers `{name}.weight` `(out, in, k, k)` with He-normal values
    /// (std `sqrt(2/fan_in)`) and a zero `{name}.bias`.
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!("`{name}`: even kernel size {kernel} cannot be same-padded")));
        }
        if dilation == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid(format!("`{name}`: zero dilation or channel count")));
        }
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weights = (0..out_channels * fan_in).map(|_| T::lit(normal.sample(rng))).collect();
        let weight = store.add(format!("{name}.weight"), vec![out_channels, in_channels, kernel, kernel], weights, true)?;
        let bias = store.add(format!("{name}.bias"), vec![out_channels], vec![T::zero(); out_channels], true)?;
        Ok(Self { weight, bias, in_channels, out_channels, kernel, dilation })
    }

    /// Zero padding on each side.
    pub fn padding(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}
