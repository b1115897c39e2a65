//! Orthonormal 8×8 type-II DCT and its inverse.
//!
//! Pixel blocks are indexed `[j][i]` (row, column) and coefficient blocks
//! `[v][u]` (vertical, horizontal frequency), so `u` pairs with the
//! horizontal coordinate `i`.

use std::f64::consts::PI;
use std::sync::OnceLock;

pub type Block = [[f64; 8]; 8];

/// Normalisation factor of frequency `u`.
#[inline]
pub fn alpha(u: usize) -> f64 {
    if u == 0 {
        (1.0f64 / 8.0).sqrt()
    } else {
        (2.0f64 / 8.0).sqrt()
    }
}

/// Separable cosine basis `cos((2i+1)uπ/16)·cos((2j+1)vπ/16)`.
#[inline]
pub fn basis(i: usize, j: usize, u: usize, v: usize) -> f64 {
    cos_table()[u][i] * cos_table()[v][j]
}

fn cos_table() -> &'static [[f64; 8]; 8] {
    static TABLE: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; 8]; 8];
        for (u, row) in t.iter_mut().enumerate() {
            for (i, c) in row.iter_mut().enumerate() {
                *c = ((2 * i + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        t
    })
}

/// `C[u][i] = α(u)·cos((2i+1)uπ/16)`.
fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static MATRIX: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let cos = cos_table();
        let mut m = [[0.0; 8]; 8];
        for u in 0..8 {
            for i in 0..8 {
                m[u][i] = alpha(u) * cos[u][i];
            }
        }
        m
    })
}

pub fn dct_8x8(patch: &Block) -> Block {
    let c = dct_matrix();
    // rows first: tmp[j][u] = Σ_i P[j][i] C[u][i]
    let mut tmp = [[0.0; 8]; 8];
    for j in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for i in 0..8 {
                acc += patch[j][i] * c[u][i];
            }
            tmp[j][u] = acc;
        }
    }
    let mut out = [[0.0; 8]; 8];
    for v in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for j in 0..8 {
                acc += c[v][j] * tmp[j][u];
            }
            out[v][u] = acc;
        }
    }
    out
}

pub fn idct_8x8(coefficients: &Block) -> Block {
    let c = dct_matrix();
    // tmp[v][i] = Σ_u Θ[v][u] C[u][i]
    let mut tmp = [[0.0; 8]; 8];
    for v in 0..8 {
        for i in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += coefficients[v][u] * c[u][i];
            }
            tmp[v][i] = acc;
        }
    }
    let mut out = [[0.0; 8]; 8];
    for j in 0..8 {
        for i in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += c[v][j] * tmp[v][i];
            }
            out[j][i] = acc;
        }
    }
    out
}
