use std::fmt;

use super::Real;
use crate::error::{Error, Result};

/// Logical `(batch, channels, height, width)` extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements of one channel across the batch.
    pub fn channel_len(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense tensor stored channel-major: element `(n, c, y, x)` lives at
/// `((c·N + n)·H + y)·W + x`.
///
/// Keeping each channel contiguous across the batch lets convolutions run
/// as one matrix product over all positions and makes channel
/// concatenation a plain append.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{}", self.shape)
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![T::zero(); shape.numel()] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; shape.numel()] }
    }

    /// Wraps data already in channel-major order.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!("{} values for shape {shape}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from conventional `n, c, y, x` row-major data.
    pub fn from_nchw(shape: Shape, nchw: &[T]) -> Result<Self> {
        if nchw.len() != shape.numel() {
            return Err(Error::shape(format!("{} values for shape {shape}", nchw.len())));
        }
        let hw = shape.h * shape.w;
        let mut data = vec![T::zero(); nchw.len()];
        for n in 0..shape.n {
            for c in 0..shape.c {
                let src = &nchw[(n * shape.c + c) * hw..][..hw];
                data[(c * shape.n + n) * hw..][..hw].copy_from_slice(src);
            }
        }
        Ok(Self { shape, data })
    }

    pub fn to_nchw(&self) -> Vec<T> {
        let s = self.shape;
        let hw = s.h * s.w;
        let mut out = vec![T::zero(); self.data.len()];
        for n in 0..s.n {
            for c in 0..s.c {
                out[(n * s.c + c) * hw..][..hw].copy_from_slice(self.item_plane(n, c));
            }
        }
        out
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((c * self.shape.n + n) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    /// Channel `c` for every batch item.
    pub fn channel(&self, c: usize) -> &[T] {
        let len = self.shape.channel_len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn item_plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape.h * self.shape.w;
        &self.data[(c * self.shape.n + n) * hw..][..hw]
    }

    /// Copies out batch item `n` as a one-item tensor.
    pub fn item(&self, n: usize) -> Tensor<T> {
        let s = Shape::new(1, self.shape.c, self.shape.h, self.shape.w);
        let mut data = Vec::with_capacity(s.numel());
        for c in 0..self.shape.c {
            data.extend_from_slice(self.item_plane(n, c));
        }
        Tensor { shape: s, data }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| Error::invalid("cannot stack zero tensors"))?.shape;
        let mut n_total = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::shape(format!("cannot stack {s} with {first}")));
            }
            n_total += s.n;
        }
        let shape = Shape::new(n_total, first.c, first.h, first.w);
        let mut data = Vec::with_capacity(shape.numel());
        for c in 0..first.c {
            for t in items {
                data.extend_from_slice(t.channel(c));
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64()).expect("finite")).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
