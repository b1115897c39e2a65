//! Mean magnitude of the DCT coefficient losses estimated by the DCT branch.
//!
//! For every frequency the spectrum is the root mean square, over pixel
//! positions and images, of the coefficient loss summed across DCUs. The
//! per-DCU coefficient loss is the relative loss times the table step.

use std::fmt::Write as _;

use super::config::{ChannelMode, ReuKind};
use super::network::{network_input, Idcn, TableKernels};
use crate::autodiff::{Eager, Tensor};
use crate::codec::{self, color::luma_plane, tables::{ChannelClass, QuantTable}};
use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::labeling::{LabelMode, LabelPrior};
use std::sync::Arc;

/// Spectrum of one estimator kind, flattened `8v + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpectrum {
    pub kind: ReuKind,
    pub quality: u32,
    pub values: [f64; 64],
}

impl LossSpectrum {
    pub fn get(&self, v: usize, u: usize) -> f64 {
        self.values[8 * v + u]
    }

    fn band_mean(&self, keep: impl Fn(usize) -> bool) -> f64 {
        let picked: Vec<f64> = (0..64).filter(|&i| keep(i / 8 + i % 8)).map(|i| self.values[i]).collect();
        picked.iter().sum::<f64>() / picked.len() as f64
    }

    /// Mean over frequencies with `u + v >= 8`.
    pub fn high_band_mean(&self) -> f64 {
        self.band_mean(|s| s >= 8)
    }

    /// Mean over frequencies with `u + v <= 2`.
    pub fn low_band_mean(&self) -> f64 {
        self.band_mean(|s| s <= 2)
    }

    /// True when the high band outweighs the low band.
    pub fn high_frequency_dominant(&self) -> bool {
        self.high_band_mean() > self.low_band_mean()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# kind={} q={}", self.kind.name(), self.quality);
        for v in 0..8 {
            let row: Vec<String> = (0..8).map(|u| format!("{:.6}", self.get(v, u))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

/// Computes the spectrum of every estimator kind over `images` degraded at `q`.
///
/// `images` are clean byte-range RGB images; `prior` supplies label maps when
/// the network uses them.
pub fn dct_loss_spectrum(
    net: &Idcn<f32>,
    prior: Option<&LabelPrior>,
    images: &[PlanarImage],
    q: u32,
) -> Result<Vec<LossSpectrum>> {
    let config = *net.config();
    let kinds = config.reu_kinds();
    if kinds.is_empty() {
        return Err(Error::invalid("model has no DCT branch"));
    }
    if images.is_empty() {
        return Err(Error::invalid("spectrum needs at least one image"));
    }
    let steps: Vec<[f64; 64]> = kinds
        .iter()
        .map(|k| {
            let class = if k.uses_luma_table() { ChannelClass::Luma } else { ChannelClass::Chroma };
            QuantTable::for_quality(q, class).map(|t| t.steps())
        })
        .collect::<Result<_>>()?;
    let tables = vec![Arc::new(TableKernels::<f32>::for_quality(q)?)];
    let mut sum_sq = vec![[0.0f64; 64]; kinds.len()];
    let mut positions = 0usize;

    for image in images {
        let degraded = codec::degrade(image, q)?.image;
        let degraded = match config.channels {
            ChannelMode::Color => degraded,
            ChannelMode::LumaOnly => luma_plane(&degraded)?,
        };
        let (h, w) = (degraded.height(), degraded.width());
        let label = match (config.labeling, prior) {
            (LabelMode::None, _) => None,
            (mode, Some(p)) => Some(p.label_map_clamped(q, h, w, mode, (0, 0))?),
            (_, None) => return Err(Error::invalid("model uses label maps but no label prior was given")),
        };
        let input = network_input::<f32>(&config, &degraded, label.as_ref())?;

        // Coefficient loss summed over DCUs, per kind, laid out as 64 planes.
        let mut totals: Vec<Vec<f64>> = vec![vec![0.0; 64 * h * w]; kinds.len()];
        let mut probe = |_dcu: usize, kind: ReuKind, z: &Tensor<f32>| {
            let slot = kinds.iter().position(|&k| k == kind).expect("probed kind is configured");
            for (f, step) in steps[slot].iter().enumerate() {
                let plane = z.item_plane(0, f);
                let acc = &mut totals[slot][f * h * w..(f + 1) * h * w];
                for (a, &g) in acc.iter_mut().zip(plane) {
                    *a += f64::from(g) * step;
                }
            }
        };
        net.forward(&mut Eager, &input, &tables, Some(&mut probe))?;

        for (slot, total) in totals.iter().enumerate() {
            for (f, plane) in total.chunks_exact(h * w).enumerate() {
                sum_sq[slot][f] += plane.iter().map(|d| d * d).sum::<f64>();
            }
        }
        positions += h * w;
    }

    Ok(kinds
        .iter()
        .zip(sum_sq)
        .map(|(&kind, sums)| LossSpectrum { kind, quality: q, values: sums.map(|s| (s / positions as f64).sqrt()) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BranchMode, ChromaMode, ModelConfig};
    use crate::synth::natural_corpus;

    fn micro() -> ModelConfig {
        ModelConfig { n: 2, k: 4, l: 3, b: 4, labeling: LabelMode::None, ..ModelConfig::default() }
    }

    #[test]
    fn zero_estimators_give_zero_spectrum() {
        let mut net = Idcn::<f32>::new(ModelConfig { chroma: ChromaMode::FullCorrection, ..micro() }, 1).unwrap();
        net.zero_estimators();
        let s = dct_loss_spectrum(&net, None, &natural_corpus(2, 24, 24, 1), 10).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|sp| sp.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn independent_of_image_order_and_matches_direct_sum() {
        let net = Idcn::<f32>::new(micro(), 2).unwrap();
        let imgs = natural_corpus(3, 16, 24, 2);
        let a = dct_loss_spectrum(&net, None, &imgs, 20).unwrap();
        let rev: Vec<_> = imgs.iter().rev().cloned().collect();
        let b = dct_loss_spectrum(&net, None, &rev, 20).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for f in 0..64 {
                assert!((x.values[f] - y.values[f]).abs() <= 1e-12 * x.values[f].max(1.0));
            }
        }

        // Direct evaluation for one image, frequency 63 of the luma estimator.
        let one = dct_loss_spectrum(&net, None, &imgs[..1], 20).unwrap();
        let degraded = codec::degrade(&imgs[0], 20).unwrap().image;
        let input = network_input::<f32>(net.config(), &degraded, None).unwrap();
        let tables = vec![Arc::new(TableKernels::<f32>::for_quality(20).unwrap())];
        let mut per_dcu: Vec<Vec<f32>> = Vec::new();
        let mut probe = |_: usize, kind: ReuKind, z: &Tensor<f32>| {
            if kind == ReuKind::Luma {
                per_dcu.push(z.item_plane(0, 63).to_vec());
            }
        };
        net.forward(&mut Eager, &input, &tables, Some(&mut probe)).unwrap();
        let step = QuantTable::for_quality(20, ChannelClass::Luma).unwrap().get(7, 7) as f64;
        let n = per_dcu[0].len();
        let ms: f64 = (0..n)
            .map(|i| {
                let d: f64 = per_dcu.iter().map(|p| p[i] as f64 * step).sum();
                d * d
            })
            .sum::<f64>()
            / n as f64;
        assert_eq!(per_dcu.len(), 2);
        assert!((one[0].get(7, 7) - ms.sqrt()).abs() < 1e-9 * ms.sqrt().max(1.0));
    }

    #[test]
    fn pixel_only_models_are_rejected() {
        let net = Idcn::<f32>::new(ModelConfig { branch: BranchMode::PixelOnly, ..micro() }, 3).unwrap();
        assert!(dct_loss_spectrum(&net, None, &natural_corpus(1, 16, 16, 3), 10).is_err());
    }

    #[test]
    fn band_means() {
        let mut values = [0.0; 64];
        for (i, v) in values.iter_mut().enumerate() {
            *v = (i / 8 + i % 8) as f64;
        }
        let s = LossSpectrum { kind: ReuKind::Luma, quality: 10, values };
        assert!((s.low_band_mean() - 8.0 / 6.0).abs() < 1e-12);
        assert!(s.high_frequency_dominant());
        assert!(s.to_text().lines().nth(8).unwrap().ends_with("14.000000"));
    }
}
