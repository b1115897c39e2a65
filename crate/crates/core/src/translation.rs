//! Implicit DCT → pixel translation.
//!
//! The pixel-domain loss of an 8×8 block is a fixed linear function of the
//! relative quantization loss `𝒢` (quantization error divided by the step):
//!
//! ```text
//! δ[j][i] = Σ_v Σ_u α(u)·α(v)·Q[v][u]·cos((2i+1)uπ/16)·cos((2j+1)vπ/16) · 𝒢[v][u]
//! ```
//!
//! Flattening pixels as `8j + i` and coefficients as `8v + u` turns this
//! into a 64×64 matrix, applied at every spatial position like a 1×1
//! convolution. Every 64-vector in the crate uses this flattening.

use std::fmt;

use num_traits::Float;

use crate::codec::{alpha, basis, idct_8x8, Block, QuantTable};
use crate::error::{Error, Result};
use crate::image::SampleRange;

pub const KERNEL_SIZE: usize = 64;

/// Relative quantization loss of one block, indexed `[v][u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeLoss(pub Block);

impl RelativeLoss {
    pub fn flatten(&self) -> [f64; 64] {
        flatten(&self.0)
    }
}

/// Row-major flattening: `out[8r + c] = block[r][c]`.
pub fn flatten(block: &Block) -> [f64; 64] {
    let mut out = [0.0; 64];
    for r in 0..8 {
        out[8 * r..8 * r + 8].copy_from_slice(&block[r]);
    }
    out
}

pub fn unflatten(values: &[f64; 64]) -> Block {
    let mut out = [[0.0; 8]; 8];
    for r in 0..8 {
        out[r].copy_from_slice(&values[8 * r..8 * r + 8]);
    }
    out
}

/// The 64×64 translation matrix for one quantization table.
#[derive(Clone, PartialEq)]
pub struct TranslationKernel {
    /// `weights[8j+i][8v+u]`, row-major.
    weights: Vec<f64>,
    table: QuantTable,
    range: SampleRange,
}

impl fmt::Debug for TranslationKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TranslationKernel")
            .field("class", &self.table.class())
            .field("quality", &self.table.quality())
            .field("range", &self.range)
            .finish_non_exhaustive()
    }
}

impl TranslationKernel {
    pub fn build(table: &QuantTable, range: SampleRange) -> Self {
        let scale = 1.0 / range.to_byte_factor();
        let mut weights = vec![0.0; KERNEL_SIZE * KERNEL_SIZE];
        for j in 0..8 {
            for i in 0..8 {
                let row = &mut weights[(8 * j + i) * KERNEL_SIZE..][..KERNEL_SIZE];
                for v in 0..8 {
                    for u in 0..8 {
                        row[8 * v + u] = alpha(u) * alpha(v) * f64::from(table.get(v, u)) * basis(i, j, u, v) * scale;
                    }
                }
            }
        }
        Self { weights, table: table.clone(), range }
    }

    #[inline]
    pub fn weight(&self, pixel: usize, coefficient: usize) -> f64 {
        self.weights[pixel * KERNEL_SIZE + coefficient]
    }

    /// Row-major `64 × 64` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights cast to another float type, row-major.
    pub fn weights_as<T: Float>(&self) -> Vec<T> {
        self.weights.iter().map(|&w| T::from(w).expect("finite weight")).collect()
    }

    pub fn table(&self) -> &QuantTable {
        &self.table
    }

    pub fn range(&self) -> SampleRange {
        self.range
    }

    /// Pixel losses for one relative-loss vector.
    pub fn apply_vector(&self, g: &[f64; 64]) -> [f64; 64] {
        let mut out = [0.0; 64];
        for (p, o) in out.iter_mut().enumerate() {
            let row = &self.weights[p * KERNEL_SIZE..][..KERNEL_SIZE];
            *o = row.iter().zip(g).fold(0.0, |acc, (w, x)| acc + w * x);
        }
        out
    }
}

/// 64 rows of 64 numbers, full precision.
impl fmt::Display for TranslationKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.weights.chunks_exact(KERNEL_SIZE) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:.17e}")).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn build_kernel(table: &QuantTable, range: SampleRange) -> TranslationKernel {
    TranslationKernel::build(table, range)
}

/// Applies a row-major 64×64 matrix at every position of a channel-major
/// field: `input[c * positions + k]` → `output[p * positions + k]`.
///
/// Each output is accumulated over input channels in ascending order,
/// starting from zero, so callers sharing this routine agree bit for bit.
pub fn translate_planes<T: Float>(weights: &[T], input: &[T], output: &mut [T], positions: usize) {
    debug_assert_eq!(weights.len(), KERNEL_SIZE * KERNEL_SIZE);
    debug_assert_eq!(input.len(), KERNEL_SIZE * positions);
    debug_assert_eq!(output.len(), KERNEL_SIZE * positions);
    for p in 0..KERNEL_SIZE {
        let out = &mut output[p * positions..(p + 1) * positions];
        out.iter_mut().for_each(|o| *o = T::zero());
        for c in 0..KERNEL_SIZE {
            let w = weights[p * KERNEL_SIZE + c];
            let src = &input[c * positions..(c + 1) * positions];
            for (o, &x) in out.iter_mut().zip(src) {
                *o = *o + w * x;
            }
        }
    }
}

/// Kernel applied to an `H×W×64` relative-loss field stored channel-major.
pub fn apply_kernel(kernel: &TranslationKernel, field: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
    let positions = height * width;
    if field.len() != KERNEL_SIZE * positions {
        return Err(Error::shape(format!(
            "field has {} values, expected 64 channels x {height}x{width}",
            field.len()
        )));
    }
    let mut out = vec![0.0; field.len()];
    translate_planes(kernel.weights(), field, &mut out, positions);
    Ok(out)
}

/// Reference pixel loss: inverse DCT of `𝒢 ∘ Q` (byte units).
pub fn oracle_loss(g: &RelativeLoss, table: &QuantTable) -> Block {
    let mut prod = [[0.0; 8]; 8];
    for v in 0..8 {
        for u in 0..8 {
            prod[v][u] = g.0[v][u] * f64::from(table.get(v, u));
        }
    }
    idct_8x8(&prod)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ChannelClass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_g(rng: &mut ChaCha8Rng) -> RelativeLoss {
        let mut b = [[0.0; 8]; 8];
        b.iter_mut().flatten().for_each(|v| *v = rng.random_range(-0.5..0.5));
        RelativeLoss(b)
    }

    #[test]
    fn zero_table_gives_zero_kernel() {
        let t = QuantTable::from_entries([[0; 8]; 8], ChannelClass::Luma, 0);
        assert!(build_kernel(&t, SampleRange::Byte).weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn dc_only_table() {
        let mut e = [[0u16; 8]; 8];
        e[0][0] = 8;
        let k = build_kernel(&QuantTable::from_entries(e, ChannelClass::Luma, 0), SampleRange::Byte);
        for p in 0..64 {
            assert!((k.weight(p, 0) - 1.0).abs() < 1e-15);
            for c in 1..64 {
                assert_eq!(k.weight(p, c), 0.0);
            }
        }
    }

    #[test]
    fn oracle_examples() {
        let t16 = QuantTable::from_entries([[16; 8]; 8], ChannelClass::Luma, 0);
        let zero = oracle_loss(&RelativeLoss([[0.0; 8]; 8]), &t16);
        assert!(zero.iter().flatten().all(|&v| v == 0.0));

        let mut one_hot = [[0.0; 8]; 8];
        one_hot[0][0] = 1.0;
        let dc = oracle_loss(&RelativeLoss(one_hot), &t16);
        assert!(dc.iter().flatten().all(|&v| (v - 2.0).abs() < 1e-12));

        // 0.5·ones ∘ 16 = 8·ones; its iDCT is Σ_uv α(u)α(v)·8·cos·cos, evaluated directly.
        let half = oracle_loss(&RelativeLoss([[0.5; 8]; 8]), &t16);
        for j in 0..8 {
            for i in 0..8 {
                let mut want = 0.0;
                for v in 0..8 {
                    for u in 0..8 {
                        want += alpha(u) * alpha(v) * 8.0 * basis(i, j, u, v);
                    }
                }
                assert!((half[j][i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = QuantTable::for_quality(20, ChannelClass::Luma).unwrap();
        let k = build_kernel(&table, SampleRange::Byte);
        for _ in 0..200 {
            let g = random_g(&mut rng);
            let got = k.apply_vector(&g.flatten());
            let want = flatten(&oracle_loss(&g, &table));
            for p in 0..64 {
                assert!((got[p] - want[p]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_hot_field_selects_column() {
        let table = QuantTable::for_quality(10, ChannelClass::Chroma).unwrap();
        let k = build_kernel(&table, SampleRange::Byte);
        let mut field = vec![0.0; 64];
        field[0] = 1.0;
        let out = apply_kernel(&k, &field, 1, 1).unwrap();
        for p in 0..64 {
            assert_eq!(out[p], k.weight(p, 0));
        }
        assert!(apply_kernel(&k, &field, 1, 2).is_err());
    }

    #[test]
    fn unit_range_is_byte_range_scaled() {
        let table = QuantTable::for_quality(5, ChannelClass::Luma).unwrap();
        let b = build_kernel(&table, SampleRange::Byte);
        let u = build_kernel(&table, SampleRange::Unit);
        for (x, y) in b.weights().iter().zip(u.weights()) {
            assert!((x / 255.0 - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn linear_in_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = QuantTable::for_quality(50, ChannelClass::Luma).unwrap();
        let k = build_kernel(&table, SampleRange::Byte);
        let (g1, g2) = (random_g(&mut rng).flatten(), random_g(&mut rng).flatten());
        // synthetic values outside (-0.5, 0.5) are fine
        let (a, b) = (3.0, -1.7);
        let mix: [f64; 64] = std::array::from_fn(|i| a * g1[i] + b * g2[i]);
        let (k1, k2, km) = (k.apply_vector(&g1), k.apply_vector(&g2), k.apply_vector(&mix));
        for p in 0..64 {
            assert!((km[p] - (a * k1[p] + b * k2[p])).abs() < 1e-9);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut b = [[0.0; 8]; 8];
        for (k, v) in b.iter_mut().flatten().enumerate() {
            *v = k as f64;
        }
        assert_eq!(unflatten(&flatten(&b)), b);
        assert_eq!(flatten(&b)[8 * 3 + 5], b[3][5]);
    }

    #[test]
    fn text_export_has_64_rows() {
        let k = build_kernel(&QuantTable::for_quality(50, ChannelClass::Luma).unwrap(), SampleRange::Byte);
        let text = k.to_string();
        assert_eq!(text.lines().count(), 64);
        let first: Vec<f64> = text.lines().next().unwrap().split_whitespace().map(|s| s.parse().unwrap()).collect();
        assert_eq!(first.len(), 64);
        assert_eq!(first[0], k.weight(0, 0));
    }
}
