//! Studio-swing YCbCr ↔ RGB conversion and loss propagation.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::{ColorSpace, PlanarImage, SampleRange};

/// Rows R, G, B; columns Y−16, Cb−128, Cr−128.
pub const YCBCR_TO_RGB: [[f64; 3]; 3] = [
    [1.164, 0.0, 1.596],
    [1.164, -0.392, -0.813],
    [1.164, 2.017, 0.0],
];

/// Offsets subtracted from (Y, Cb, Cr) before applying [`YCBCR_TO_RGB`].
pub const YCBCR_OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

/// Exact inverse of [`YCBCR_TO_RGB`] via the adjugate.
pub fn rgb_to_ycbcr_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| {
        let m = YCBCR_TO_RGB;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / det;
            }
        }
        inv
    })
}

#[inline]
pub fn ycbcr_to_rgb_pixel(ycc: [f64; 3]) -> [f64; 3] {
    let d = [ycc[0] - YCBCR_OFFSET[0], ycc[1] - YCBCR_OFFSET[1], ycc[2] - YCBCR_OFFSET[2]];
    let m = &YCBCR_TO_RGB;
    [
        m[0][0] * d[0] + m[0][1] * d[1] + m[0][2] * d[2],
        m[1][0] * d[0] + m[1][1] * d[1] + m[1][2] * d[2],
        m[2][0] * d[0] + m[2][1] * d[1] + m[2][2] * d[2],
    ]
}

#[inline]
pub fn rgb_to_ycbcr_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let m = rgb_to_ycbcr_matrix();
    let mut out = [0.0; 3];
    for r in 0..3 {
        out[r] = m[r][0] * rgb[0] + m[r][1] * rgb[1] + m[r][2] * rgb[2] + YCBCR_OFFSET[r];
    }
    out
}

fn convert(
    image: &PlanarImage,
    from: ColorSpace,
    to: ColorSpace,
    f: impl Fn([f64; 3]) -> [f64; 3],
) -> Result<PlanarImage> {
    if image.space() != from {
        return Err(Error::invalid(format!("expected a {from:?} image, got {:?}", image.space())));
    }
    if image.range() != SampleRange::Byte {
        return Err(Error::invalid("colour conversion needs byte-range samples"));
    }
    let (p0, p1, p2) = (image.plane(0), image.plane(1), image.plane(2));
    let n = p0.len();
    let mut data = vec![0.0; 3 * n];
    for k in 0..n {
        let o = f([p0[k], p1[k], p2[k]]);
        data[k] = o[0];
        data[n + k] = o[1];
        data[2 * n + k] = o[2];
    }
    PlanarImage::new(image.height(), image.width(), 3, to, SampleRange::Byte, data)
}

/// Applies the studio-swing conversion. No clamping.
pub fn ycbcr_to_rgb(image: &PlanarImage) -> Result<PlanarImage> {
    convert(image, ColorSpace::YCbCr, ColorSpace::Rgb, ycbcr_to_rgb_pixel)
}

/// Exact inverse of [`ycbcr_to_rgb`]. No clamping.
pub fn rgb_to_ycbcr(image: &PlanarImage) -> Result<PlanarImage> {
    convert(image, ColorSpace::Rgb, ColorSpace::YCbCr, rgb_to_ycbcr_pixel)
}

/// Luma plane of an RGB byte image.
pub fn luma_plane(image: &PlanarImage) -> Result<PlanarImage> {
    Ok(rgb_to_ycbcr(image)?.channel_image(0))
}

/// Maps per-pixel (δY, δCb, δCr) losses to (δR, δG, δB) through the constant Jacobian.
pub fn propagate_loss_rgb(d_y: &[f64], d_cb: &[f64], d_cr: &[f64]) -> Result<[Vec<f64>; 3]> {
    if d_y.len() != d_cb.len() || d_y.len() != d_cr.len() {
        return Err(Error::shape(format!(
            "loss planes differ in length: {} / {} / {}",
            d_y.len(),
            d_cb.len(),
            d_cr.len()
        )));
    }
    let m = &YCBCR_TO_RGB;
    let mut out = [vec![0.0; d_y.len()], vec![0.0; d_y.len()], vec![0.0; d_y.len()]];
    for k in 0..d_y.len() {
        for (c, plane) in out.iter_mut().enumerate() {
            plane[k] = m[c][0] * d_y[k] + m[c][1] * d_cb[k] + m[c][2] * d_cr[k];
        }
    }
    Ok(out)
}
