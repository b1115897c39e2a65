//! Forward and backward kernels on plain tensors.

use super::real::{gemm, MatMut, MatRef};
use super::{Real, Shape, Tensor};
use crate::translation::translate_planes;

/// Upper bound on im2col buffer elements per chunk.
const IM2COL_BUDGET: usize = 1 << 22;

/// Geometry of a stride-1, same-padded 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    fn pad(&self) -> isize {
        ((self.kernel - 1) * self.dilation / 2) as isize
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Image rows (over the whole batch) per im2col chunk.
    fn rows_per_chunk(&self, width: usize) -> usize {
        (IM2COL_BUDGET / (self.patch_len() * width).max(1)).max(1)
    }
}

/// Fills `cols` (`patch_len × rows·W`) for global image rows `r0..r1`,
/// where global row `r` is `n·H + y`. Row order is `(ci, ky, kx)`.
fn im2col<T: Real>(x: &Tensor<T>, g: &ConvGeometry, r0: usize, r1: usize, cols: &mut [T]) {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    let ncols = (r1 - r0) * w;
    let k = g.kernel;
    let d = g.dilation as isize;
    let pad = g.pad();
    for ci in 0..g.in_channels {
        let chan = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                let sx = kx as isize * d - pad;
                let x_lo = (-sx).clamp(0, w as isize) as usize;
                let x_hi = (w as isize - sx).clamp(0, w as isize) as usize;
                for r in r0..r1 {
                    let (n, y) = (r / h, r % h);
                    let yy = y as isize + ky as isize * d - pad;
                    let seg = &mut dst_row[(r - r0) * w..(r - r0 + 1) * w];
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &chan[(n * h + yy as usize) * w..][..w];
                    seg[..x_lo].fill(T::zero());
                    seg[x_hi..].fill(T::zero());
                    let s_lo = (x_lo as isize + sx) as usize;
                    seg[x_lo..x_hi].copy_from_slice(&src[s_lo..s_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `dx` (adjoint of [`im2col`]).
fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, r0: usize, r1: usize, dx: &mut Tensor<T>) {
    let s = dx.shape();
    let (h, w) = (s.h, s.w);
    let ncols = (r1 - r0) * w;
    let k = g.kernel;
    let d = g.dilation as isize;
    let pad = g.pad();
    let chan_len = s.channel_len();
    for ci in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                let sx = kx as isize * d - pad;
                let x_lo = (-sx).clamp(0, w as isize) as usize;
                let x_hi = (w as isize - sx).clamp(0, w as isize) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for r in r0..r1 {
                    let (n, y) = (r / h, r % h);
                    let yy = y as isize + ky as isize * d - pad;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let seg = &src_row[(r - r0) * w + x_lo..(r - r0) * w + x_hi];
                    let base = ci * chan_len + (n * h + yy as usize) * w;
                    let s_lo = (x_lo as isize + sx) as usize;
                    let dst = &mut dx.data_mut()[base + s_lo..base + s_lo + seg.len()];
                    for (o, &v) in dst.iter_mut().zip(seg) {
                        *o += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], g: &ConvGeometry) -> Tensor<T> {
    let s = x.shape();
    debug_assert_eq!(s.c, g.in_channels);
    let out_shape = s.with_channels(g.out_channels);
    let mut out = Tensor::zeros(out_shape);
    let total = s.channel_len();
    let wmat = MatRef::row_major(weight, g.out_channels, g.patch_len());
    if g.kernel == 1 {
        gemm(
            wmat,
            MatRef::row_major(x.data(), g.in_channels, total),
            T::zero(),
            MatMut::row_major(out.data_mut(), g.out_channels, total),
        );
    } else {
        let rows = s.n * s.h;
        let step = g.rows_per_chunk(s.w);
        let mut cols = vec![T::zero(); g.patch_len() * step.min(rows) * s.w];
        let mut r0 = 0;
        while r0 < rows {
            let r1 = (r0 + step).min(rows);
            let ncols = (r1 - r0) * s.w;
            let cols = &mut cols[..g.patch_len() * ncols];
            im2col(x, g, r0, r1, cols);
            let start = r0 * s.w;
            let c = MatMut {
                rows: g.out_channels,
                cols: ncols,
                rs: total,
                cs: 1,
                data: &mut out.data_mut()[start..],
            };
            gemm(wmat, MatRef::row_major(cols, g.patch_len(), ncols), T::zero(), c);
            r0 = r1;
        }
    }
    for (co, &b) in bias.iter().enumerate() {
        if b != T::zero() {
            out.data_mut()[co * total..(co + 1) * total].iter_mut().for_each(|v| *v += b);
        }
    }
    out
}

/// Accumulates weight, bias and (optionally) input gradients.
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    g: &ConvGeometry,
    dout: &Tensor<T>,
    dweight: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut Tensor<T>>,
) {
    let s = x.shape();
    let total = s.channel_len();
    for (co, db) in dbias.iter_mut().enumerate() {
        *db += dout.channel(co).iter().copied().sum::<T>();
    }
    let wmat = MatRef::row_major(weight, g.out_channels, g.patch_len());
    if g.kernel == 1 {
        let dmat = MatRef::row_major(dout.data(), g.out_channels, total);
        gemm(
            dmat,
            MatRef::row_major(x.data(), g.in_channels, total).t(),
            T::one(),
            MatMut::row_major(dweight, g.out_channels, g.in_channels),
        );
        if let Some(dx) = dx {
            gemm(wmat.t(), dmat, T::one(), MatMut::row_major(dx.data_mut(), g.in_channels, total));
        }
        return;
    }
    let rows = s.n * s.h;
    let step = g.rows_per_chunk(s.w);
    let chunk_cap = g.patch_len() * step.min(rows) * s.w;
    let mut cols = vec![T::zero(); chunk_cap];
    let mut dcols = if dx.is_some() { vec![T::zero(); chunk_cap] } else { Vec::new() };
    let mut dx = dx;
    let mut r0 = 0;
    while r0 < rows {
        let r1 = (r0 + step).min(rows);
        let ncols = (r1 - r0) * s.w;
        let cols = &mut cols[..g.patch_len() * ncols];
        im2col(x, g, r0, r1, cols);
        let dchunk = MatRef { data: &dout.data()[r0 * s.w..], rows: g.out_channels, cols: ncols, rs: total, cs: 1 };
        gemm(
            dchunk,
            MatRef::row_major(&*cols, g.patch_len(), ncols).t(),
            T::one(),
            MatMut::row_major(dweight, g.out_channels, g.patch_len()),
        );
        if let Some(dx) = dx.as_deref_mut() {
            let dcols = &mut dcols[..g.patch_len() * ncols];
            gemm(wmat.t(), dchunk, T::zero(), MatMut::row_major(dcols, g.patch_len(), ncols));
            col2im(dcols, g, r0, r1, dx);
        }
        r0 = r1;
    }
}

pub(crate) fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
    out
}

/// Passes gradient where the output is positive (zero subgradient at 0).
pub(crate) fn relu_backward<T: Real>(out: &Tensor<T>, dout: &Tensor<T>, dx: &mut Tensor<T>) {
    for ((d, &y), &g) in dx.data_mut().iter_mut().zip(out.data()).zip(dout.data()) {
        if y > T::zero() {
            *d += g;
        }
    }
}

/// `0.5·tanh(x)`, strictly inside `(-0.5, 0.5)`.
pub(crate) fn qru_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::lit(0.5);
    // tanh saturates to ±1 in floating point for large |x|; pull the result
    // one ulp inside so the open bound holds exactly.
    let limit = half - half * T::epsilon();
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = (half * v.tanh()).max(-limit).min(limit));
    out
}

/// `d/dx 0.5·tanh(x) = 0.5·(1 − tanh²x) = 0.5·(1 − 4y²)`.
pub(crate) fn qru_backward<T: Real>(out: &Tensor<T>, dout: &Tensor<T>, dx: &mut Tensor<T>) {
    let half = T::lit(0.5);
    let four = T::lit(4.0);
    for ((d, &y), &g) in dx.data_mut().iter_mut().zip(out.data()).zip(dout.data()) {
        *d += g * half * (T::one() - four * y * y);
    }
}

pub(crate) fn concat_forward<T: Real>(xs: &[&Tensor<T>]) -> Tensor<T> {
    let first = xs[0].shape();
    let c: usize = xs.iter().map(|t| t.shape().c).sum();
    let shape = first.with_channels(c);
    let mut data = Vec::with_capacity(shape.numel());
    for t in xs {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(shape, data).expect("concat sizes agree")
}

/// Per-item fixed 64×64 translation: `out[:, n] = K_n · x[:, n]`.
pub(crate) fn translate_forward<T: Real>(x: &Tensor<T>, kernels: &[&[T]]) -> Tensor<T> {
    let s = x.shape();
    let hw = s.h * s.w;
    let mut out = Tensor::zeros(s);
    let mut src = vec![T::zero(); 64 * hw];
    let mut dst = vec![T::zero(); 64 * hw];
    for (n, k) in kernels.iter().enumerate() {
        for c in 0..64 {
            src[c * hw..(c + 1) * hw].copy_from_slice(x.item_plane(n, c));
        }
        translate_planes(k, &src, &mut dst, hw);
        for c in 0..64 {
            let i = out.index(n, c, 0, 0);
            out.data_mut()[i..i + hw].copy_from_slice(&dst[c * hw..(c + 1) * hw]);
        }
    }
    out
}

pub(crate) fn transpose_64<T: Real>(k: &[T]) -> Vec<T> {
    let mut t = vec![T::zero(); 64 * 64];
    for p in 0..64 {
        for c in 0..64 {
            t[c * 64 + p] = k[p * 64 + c];
        }
    }
    t
}

pub(crate) fn mse_forward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> T {
    // f64 accumulation keeps the loss reproducible and accurate for large patches
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).as_f64();
            d * d
        })
        .sum();
    T::lit(sum / pred.shape().numel() as f64)
}

pub(crate) fn mse_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, dloss: T, dpred: &mut Tensor<T>) {
    let scale = dloss * T::lit(2.0 / pred.shape().numel() as f64);
    for ((d, &p), &t) in dpred.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        *d += scale * (p - t);
    }
}

pub(crate) fn scalar_shape() -> Shape {
    Shape::new(1, 1, 1, 1)
}
