//! Full-reference image quality metrics on byte-range images.
//!
//! PSNR is computed jointly over all channels. SSIM and PSNR-B are computed
//! per channel and averaged.
//!
//! PSNR-B follows Yim and Bovik's blocking-effect factor with block size 8:
//! for the test image, `D_B` is the mean squared difference of horizontally
//! and vertically adjacent pixel pairs that straddle an 8-pixel block
//! boundary and `D_Bc` the same over all other adjacent pairs. With
//! `η = log2(8) / log2(min(H, W))` when `D_B > D_Bc` (else 0),
//! `BEF = η·(D_B − D_Bc)` and `PSNR-B = 10·log10(255² / (MSE + BEF))`.
//! Boundary pairs are those whose right (or lower) pixel index is a positive
//! multiple of 8 inside the image.

use crate::error::{Error, Result};
use crate::image::PlanarImage;

/// Reported for a zero error instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;
const PEAK: f64 = 255.0;
const BLOCK: usize = 8;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub psnr_b_db: f64,
    pub ssim_channels: Vec<f64>,
    pub psnr_b_channels: Vec<f64>,
}

fn check_pair(a: &PlanarImage, b: &PlanarImage) -> Result<()> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Mean squared error over every sample of every channel.
pub fn mse(reference: &PlanarImage, test: &PlanarImage) -> Result<f64> {
    check_pair(reference, test)?;
    let sum: f64 = reference.data().iter().zip(test.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / reference.data().len() as f64)
}

pub fn psnr(reference: &PlanarImage, test: &PlanarImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(reference, test)?))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" filtering of an `h×w` plane: output is `(h−10)×(w−10)`.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one plane pair over all fully contained windows.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Per-channel SSIM.
pub fn ssim_channels(reference: &PlanarImage, test: &PlanarImage) -> Result<Vec<f64>> {
    check_pair(reference, test)?;
    let (h, w) = (reference.height(), reference.width());
    (0..reference.channels()).map(|c| ssim_plane(reference.plane(c), test.plane(c), h, w)).collect()
}

pub fn ssim(reference: &PlanarImage, test: &PlanarImage) -> Result<f64> {
    let ch = ssim_channels(reference, test)?;
    Ok(ch.iter().sum::<f64>() / ch.len() as f64)
}

/// Blocking-effect factor of one plane.
pub fn blocking_effect_factor(plane: &[f64], h: usize, w: usize) -> f64 {
    let (mut db, mut nb, mut dc, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let d = plane[y * w + x] - plane[y * w + x + 1];
            if (x + 1) % BLOCK == 0 {
                db += d * d;
                nb += 1;
            } else {
                dc += d * d;
                nc += 1;
            }
        }
    }
    for y in 0..h.saturating_sub(1) {
        let boundary = (y + 1) % BLOCK == 0;
        for x in 0..w {
            let d = plane[y * w + x] - plane[(y + 1) * w + x];
            if boundary {
                db += d * d;
                nb += 1;
            } else {
                dc += d * d;
                nc += 1;
            }
        }
    }
    if nb == 0 || nc == 0 {
        return 0.0;
    }
    let (db, dc) = (db / nb as f64, dc / nc as f64);
    let min_side = h.min(w) as f64;
    if db <= dc || min_side <= 1.0 {
        return 0.0;
    }
    let eta = (BLOCK as f64).log2() / min_side.log2();
    eta * (db - dc)
}

/// Per-channel PSNR-B. Identical planes are reported at the cap.
pub fn psnr_b_channels(reference: &PlanarImage, test: &PlanarImage) -> Result<Vec<f64>> {
    check_pair(reference, test)?;
    let (h, w) = (reference.height(), reference.width());
    Ok((0..reference.channels())
        .map(|c| {
            let (r, t) = (reference.plane(c), test.plane(c));
            if r == t {
                return PSNR_CAP_DB;
            }
            let mse = r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64;
            psnr_from_mse(mse + blocking_effect_factor(t, h, w))
        })
        .collect())
}

pub fn psnr_b(reference: &PlanarImage, test: &PlanarImage) -> Result<f64> {
    let ch = psnr_b_channels(reference, test)?;
    Ok(ch.iter().sum::<f64>() / ch.len() as f64)
}

/// All three metrics for one pair.
pub fn evaluate(reference: &PlanarImage, test: &PlanarImage) -> Result<MetricReport> {
    let ssim_channels = ssim_channels(reference, test)?;
    let psnr_b_channels = psnr_b_channels(reference, test)?;
    let n = ssim_channels.len() as f64;
    Ok(MetricReport {
        psnr_db: psnr(reference, test)?,
        ssim: ssim_channels.iter().sum::<f64>() / n,
        psnr_b_db: psnr_b_channels.iter().sum::<f64>() / n,
        ssim_channels,
        psnr_b_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::degrade;
    use crate::image::{ColorSpace, SampleRange};
    use crate::synth::natural_image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn with_data(like: &PlanarImage, data: Vec<f64>) -> PlanarImage {
        PlanarImage::new(like.height(), like.width(), like.channels(), like.space(), like.range(), data).unwrap()
    }

    /// Direct per-window SSIM with an explicit 2-D Gaussian.
    fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let r = 5i64;
        let mut win = vec![0.0; 121];
        for dy in -r..=r {
            for dx in -r..=r {
                win[((dy + r) * 11 + dx + r) as usize] = (-((dx * dx + dy * dy) as f64) / 4.5).exp();
            }
        }
        let s: f64 = win.iter().sum();
        win.iter_mut().for_each(|v| *v /= s);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for k in 0..121 {
                    let i = (y0 + k / 11) * w + x0 + k % 11;
                    ma += win[k] * a[i];
                    mb += win[k] * b[i];
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for k in 0..121 {
                    let i = (y0 + k / 11) * w + x0 + k % 11;
                    va += win[k] * (a[i] - ma).powi(2);
                    vb += win[k] * (b[i] - mb).powi(2);
                    cov += win[k] * (a[i] - ma) * (b[i] - mb);
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let a = natural_image(24, 24, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = with_data(&a, a.data().iter().map(|v| v + 1.0).collect());
        assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-9);
        let mut inv = a.data().to_vec();
        let n = 24 * 24;
        inv[n..2 * n].iter_mut().for_each(|v| *v = 255.0 - *v);
        let c = with_data(&a, inv);
        let mut sum = 0.0;
        for ch in 0..3 {
            for y in 0..24 {
                for x in 0..24 {
                    sum += (a.get(ch, y, x) - c.get(ch, y, x)).powi(2);
                }
            }
        }
        let oracle = 10.0 * (255.0f64 * 255.0 / (sum / (3 * n) as f64)).log10();
        assert!((psnr(&a, &c).unwrap() - oracle).abs() < 1e-9);
        assert_eq!(psnr(&a, &c).unwrap(), psnr(&c, &a).unwrap());
    }

    #[test]
    fn ssim_matches_direct_oracle() {
        let a = natural_image(40, 36, 2);
        let b = degrade(&a, 15).unwrap().image;
        for c in 0..3 {
            let fast = ssim_plane(a.plane(c), b.plane(c), 40, 36).unwrap();
            let slow = ssim_oracle(a.plane(c), b.plane(c), 40, 36);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
            assert!(fast > 0.0 && fast < 1.0);
        }
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = with_data(&a, a.data().iter().map(|v| 255.0 - v).collect());
        assert!(ssim(&a, &neg).unwrap() < 0.0);
        assert!(ssim(&natural_image(10, 30, 1), &natural_image(10, 30, 2)).is_err());
    }

    #[test]
    fn psnr_b_penalizes_blocking_only() {
        let a = natural_image(64, 64, 3);
        assert_eq!(psnr_b(&a, &a).unwrap(), PSNR_CAP_DB);
        let jpeg = degrade(&a, 10).unwrap().image;
        assert!(psnr_b(&a, &jpeg).unwrap() < psnr(&a, &jpeg).unwrap());

        // Smooth, grid-free perturbation.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phase: f64 = rng.random::<f64>() * 6.0;
        let smooth: Vec<f64> = (0..3 * 64 * 64)
            .map(|i| {
                let (y, x) = ((i / 64) % 64, i % 64);
                a.data()[i] + 3.0 * ((x as f64 * 0.37 + y as f64 * 0.23 + phase).sin())
            })
            .collect();
        let s = with_data(&a, smooth);
        assert!((psnr_b(&a, &s).unwrap() - psnr(&a, &s).unwrap()).abs() < 0.05);
    }

    #[test]
    fn metrics_are_flip_invariant() {
        let a = natural_image(32, 40, 4);
        let b = degrade(&a, 20).unwrap().image;
        let (fa, fb) = (a.flipped_horizontally(), b.flipped_horizontally());
        let r = evaluate(&a, &b).unwrap();
        let f = evaluate(&fa, &fb).unwrap();
        assert!((r.psnr_db - f.psnr_db).abs() < 1e-9);
        assert!((r.ssim - f.ssim).abs() < 1e-9);
        // The block grid is anchored at the left edge, so only 8-aligned widths are flip-invariant for PSNR-B.
        assert!((r.psnr_b_db - f.psnr_b_db).abs() < 1e-9);
    }

    #[test]
    fn gray_images_use_one_channel() {
        let g = PlanarImage::new(16, 16, 1, ColorSpace::Gray, SampleRange::Byte, vec![100.0; 256]).unwrap();
        let h = with_data(&g, vec![101.0; 256]);
        let r = evaluate(&g, &h).unwrap();
        assert_eq!(r.ssim_channels.len(), 1);
        assert!((r.psnr_db - 48.130803608679).abs() < 1e-9);
    }
}
