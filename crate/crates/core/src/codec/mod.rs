//! JPEG degradation model.
//!
//! The pipeline mirrors a baseline 4:2:0 JPEG encode/decode round trip
//! without entropy coding: RGB → YCbCr, edge-replicated padding, 2×2 box
//! chroma subsampling, level-shifted blockwise DCT, quantization and
//! dequantization, inverse DCT, nearest-neighbour chroma upsampling,
//! YCbCr → RGB, crop, clamp and rounding to 8-bit sample values.

pub mod color;
pub mod dct;
pub mod tables;

pub use color::{propagate_loss_rgb, rgb_to_ycbcr, ycbcr_to_rgb};
pub use dct::{alpha, basis, dct_8x8, idct_8x8, Block};
pub use tables::{quality_scale, ChannelClass, QuantTable, TablePair, BASE_CHROMA, BASE_LUMA};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, PlanarImage, SampleRange};

/// Sample offset removed before the forward DCT.
pub const LEVEL_SHIFT: f64 = 128.0;

/// 8×8 blocks covering a plane whose sides are multiples of 8.
///
/// Block `by * blocks_x + bx` has its top-left pixel at `(8·by, 8·bx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub blocks: Vec<Block>,
    pub blocks_y: usize,
    pub blocks_x: usize,
}

impl BlockGrid {
    pub fn origin(&self, index: usize) -> (usize, usize) {
        (8 * (index / self.blocks_x), 8 * (index % self.blocks_x))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Level-shifted forward DCT of every block of `plane` (`h`, `w` multiples of 8).
pub fn plane_to_blocks(plane: &[f64], h: usize, w: usize) -> BlockGrid {
    debug_assert!(h % 8 == 0 && w % 8 == 0 && plane.len() == h * w);
    let (blocks_y, blocks_x) = (h / 8, w / 8);
    let mut blocks = Vec::with_capacity(blocks_y * blocks_x);
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let mut patch = [[0.0; 8]; 8];
            for (j, row) in patch.iter_mut().enumerate() {
                let src = &plane[(8 * by + j) * w + 8 * bx..][..8];
                for (dst, s) in row.iter_mut().zip(src) {
                    *dst = s - LEVEL_SHIFT;
                }
            }
            blocks.push(dct_8x8(&patch));
        }
    }
    BlockGrid { blocks, blocks_y, blocks_x }
}

/// Inverse of [`plane_to_blocks`].
pub fn blocks_to_plane(grid: &BlockGrid) -> Vec<f64> {
    let w = 8 * grid.blocks_x;
    let mut plane = vec![0.0; 64 * grid.blocks.len()];
    for (k, coef) in grid.blocks.iter().enumerate() {
        let (y0, x0) = grid.origin(k);
        let patch = idct_8x8(coef);
        for (j, row) in patch.iter().enumerate() {
            let dst = &mut plane[(y0 + j) * w + x0..][..8];
            for (d, p) in dst.iter_mut().zip(row) {
                *d = p + LEVEL_SHIFT;
            }
        }
    }
    plane
}

/// Quantizes and dequantizes every coefficient: `round(Θ/Q)·Q`.
pub fn quantize_blocks(grid: &BlockGrid, table: &QuantTable) -> BlockGrid {
    let steps = table.steps();
    let blocks = grid
        .blocks
        .iter()
        .map(|coef| {
            let mut out = [[0.0; 8]; 8];
            for v in 0..8 {
                for u in 0..8 {
                    let q = steps[8 * v + u];
                    out[v][u] = (coef[v][u] / q).round() * q;
                }
            }
            out
        })
        .collect();
    BlockGrid { blocks, blocks_y: grid.blocks_y, blocks_x: grid.blocks_x }
}

/// Pads a plane to `ph × pw` by replicating its last row and column.
pub fn pad_edge(plane: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let row = &plane[y.min(h - 1) * w..][..w];
        out.extend_from_slice(row);
        out.extend(std::iter::repeat_n(row[w - 1], pw - w));
    }
    out
}

/// 2×2 box mean; `h`, `w` must be even.
pub fn subsample_2x2(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let a = plane[2 * y * w + 2 * x] + plane[2 * y * w + 2 * x + 1];
            let b = plane[(2 * y + 1) * w + 2 * x] + plane[(2 * y + 1) * w + 2 * x + 1];
            out.push((a + b) * 0.25);
        }
    }
    out
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_2x2(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let ow = 2 * w;
    let mut out = vec![0.0; 4 * h * w];
    for y in 0..2 * h {
        for x in 0..ow {
            out[y * ow + x] = plane[(y / 2) * w + x / 2];
        }
    }
    out
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Coefficients of one plane before and after quantization.
#[derive(Debug, Clone)]
pub struct PlaneTrace {
    pub original: BlockGrid,
    pub quantized: BlockGrid,
    pub table: QuantTable,
}

/// Output of [`degrade`].
#[derive(Debug, Clone)]
pub struct Degraded {
    pub image: PlanarImage,
    pub tables: TablePair,
}

/// Output of [`degrade_traced`]: the degraded image plus Y, Cb, Cr coefficient traces.
#[derive(Debug, Clone)]
pub struct DegradeTrace {
    pub degraded: Degraded,
    pub planes: [PlaneTrace; 3],
}

/// Simulates JPEG compression of a byte-range RGB image at quality `q`.
pub fn degrade(image: &PlanarImage, q: u32) -> Result<Degraded> {
    degrade_traced(image, q).map(|t| t.degraded)
}

/// [`degrade`], also returning every plane's coefficients before and after quantization.
pub fn degrade_traced(image: &PlanarImage, q: u32) -> Result<DegradeTrace> {
    if image.space() != ColorSpace::Rgb || image.range() != SampleRange::Byte {
        return Err(Error::invalid("degrade expects a byte-range RGB image"));
    }
    let tables = TablePair::for_quality(q)?;
    let (h, w) = (image.height(), image.width());
    let ycc = rgb_to_ycbcr(image)?;

    // Luma: pad to a multiple of 8.
    let (lh, lw) = (round_up(h, 8), round_up(w, 8));
    let luma = pad_edge(ycc.plane(0), h, w, lh, lw);
    let luma_trace = code_plane(&luma, lh, lw, &tables.luma);
    let luma_out = blocks_to_plane(&luma_trace.quantized);

    // Chroma: pad to a multiple of 16, then subsample.
    let (ch, cw) = (round_up(h, 16), round_up(w, 16));
    let mut chroma_out = Vec::with_capacity(2);
    let mut chroma_traces = Vec::with_capacity(2);
    for c in 1..3 {
        let padded = pad_edge(ycc.plane(c), h, w, ch, cw);
        let small = subsample_2x2(&padded, ch, cw);
        let trace = code_plane(&small, ch / 2, cw / 2, &tables.chroma);
        let decoded = blocks_to_plane(&trace.quantized);
        chroma_out.push(upsample_2x2(&decoded, ch / 2, cw / 2));
        chroma_traces.push(trace);
    }

    let n = h * w;
    let mut rgb = vec![0.0; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let ycc_px = [luma_out[y * lw + x], chroma_out[0][y * cw + x], chroma_out[1][y * cw + x]];
            let px = color::ycbcr_to_rgb_pixel(ycc_px);
            for c in 0..3 {
                rgb[c * n + y * w + x] = px[c].clamp(0.0, 255.0).round();
            }
        }
    }
    let out = PlanarImage::new(h, w, 3, ColorSpace::Rgb, SampleRange::Byte, rgb)?;
    let cr = chroma_traces.pop().expect("two chroma traces");
    let cb = chroma_traces.pop().expect("two chroma traces");
    Ok(DegradeTrace { degraded: Degraded { image: out, tables }, planes: [luma_trace, cb, cr] })
}

fn code_plane(plane: &[f64], h: usize, w: usize, table: &QuantTable) -> PlaneTrace {
    let original = plane_to_blocks(plane, h, w);
    let quantized = quantize_blocks(&original, table);
    PlaneTrace { original, quantized, table: table.clone() }
}
