//! Position-labeling priors.
//!
//! The degradation error of a JPEG pixel depends on where the pixel sits
//! inside its 8×8 block (and, for colour, inside the 16×16 chroma macro
//! block). A [`StdDevGrid`] records the population standard deviation of
//! `original − degraded` for every phase `(x mod ω, y mod ω)`; tiling it over
//! an image gives a [`LabelMap`].

use std::fmt;
use std::str::FromStr;

use crate::codec::{self, quality_scale};
use crate::error::{Error, Result};
use crate::image::{PlanarImage, SampleRange};

/// Which plane a grid describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelChannel {
    R,
    G,
    B,
    Luma,
}

impl LabelChannel {
    pub const RGB: [LabelChannel; 3] = [LabelChannel::R, LabelChannel::G, LabelChannel::B];

    pub fn name(self) -> &'static str {
        match self {
            LabelChannel::R => "R",
            LabelChannel::G => "G",
            LabelChannel::B => "B",
            LabelChannel::Luma => "Luma",
        }
    }
}

impl FromStr for LabelChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" => Ok(LabelChannel::R),
            "G" => Ok(LabelChannel::G),
            "B" => Ok(LabelChannel::B),
            "Luma" => Ok(LabelChannel::Luma),
            _ => Err(Error::invalid(format!("unknown label channel `{s}`"))),
        }
    }
}

/// How label information enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelMode {
    None,
    /// One channel: the per-position Euclidean norm across the grids.
    Simplified,
    /// One channel per grid.
    MultiChannel,
}

impl LabelMode {
    /// Label channels produced from `grids` source grids.
    pub fn channels(self, grids: usize) -> usize {
        match self {
            LabelMode::None => 0,
            LabelMode::Simplified => 1,
            LabelMode::MultiChannel => grids,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelMode::None => "none",
            LabelMode::Simplified => "simplified",
            LabelMode::MultiChannel => "multichannel",
        }
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(LabelMode::None),
            "simplified" => Ok(LabelMode::Simplified),
            "multichannel" | "multi" => Ok(LabelMode::MultiChannel),
            _ => Err(Error::invalid(format!("unknown labeling mode `{s}`"))),
        }
    }
}

/// Per-phase standard deviation of the degradation error, in byte units.
#[derive(Debug, Clone, PartialEq)]
pub struct StdDevGrid {
    /// Row-major `ω×ω`: `sigma[y * ω + x]` is the cell for `(x mod ω, y mod ω)`.
    pub sigma: Vec<f64>,
    pub period: usize,
    pub channel: LabelChannel,
    pub quality: u32,
    pub sample_count: Vec<u64>,
}

impl StdDevGrid {
    /// A grid with the same value everywhere.
    pub fn constant(period: usize, channel: LabelChannel, quality: u32, value: f64) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid("grid period must be positive"));
        }
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::invalid(format!("standard deviation {value} is not a finite non-negative number")));
        }
        Ok(Self {
            sigma: vec![value; period * period],
            period,
            channel,
            quality,
            sample_count: vec![1; period * period],
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.sigma[(y % self.period) * self.period + x % self.period]
    }

    /// Smallest per-cell sample count.
    pub fn min_samples(&self) -> u64 {
        self.sample_count.iter().copied().min().unwrap_or(0)
    }

    /// Plain-text form: a header line, then `ω` rows of `ω` values.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# q={} channel={} omega={} sample_count={}\n",
            self.quality,
            self.channel.name(),
            self.period,
            self.min_samples()
        );
        for row in self.sigma.chunks(self.period) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses [`StdDevGrid::to_text`] output. Per-cell counts are restored
    /// from the header's single count.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("sigma grid", d);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let header = header.strip_prefix('#').ok_or_else(|| bad("missing header".into()))?;
        let (mut q, mut channel, mut period, mut count) = (None, None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("header field `{field}`")))?;
            let parse_err = |_| bad(format!("header value `{field}`"));
            match k {
                "q" => q = Some(v.parse::<u32>().map_err(parse_err)?),
                "channel" => channel = Some(v.parse::<LabelChannel>()?),
                "omega" => period = Some(v.parse::<usize>().map_err(parse_err)?),
                "sample_count" => count = Some(v.parse::<u64>().map_err(parse_err)?),
                _ => return Err(bad(format!("unknown header key `{k}`"))),
            }
        }
        let (Some(quality), Some(channel), Some(period), Some(count)) = (q, channel, period, count) else {
            return Err(bad("incomplete header".into()));
        };
        let mut sigma = Vec::with_capacity(period * period);
        for line in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("value `{t}`"))))
                .collect::<Result<_>>()?;
            if row.len() != period {
                return Err(bad(format!("row of {} values, expected {period}", row.len())));
            }
            sigma.extend(row);
        }
        if sigma.len() != period * period {
            return Err(bad(format!("{} rows, expected {period}", sigma.len() / period.max(1))));
        }
        if sigma.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(bad("negative or non-finite sigma".into()));
        }
        Ok(Self { sigma, period, channel, quality, sample_count: vec![count; period * period] })
    }
}

/// Running per-phase moments of `original − degraded` (Welford updates in
/// a fixed pixel order, so a constant difference gives exactly zero).
#[derive(Debug, Clone)]
pub struct StdDevAccumulator {
    period: usize,
    channel: LabelChannel,
    quality: u32,
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: Vec<u64>,
}

impl StdDevAccumulator {
    pub fn new(period: usize, channel: LabelChannel, quality: u32) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid("grid period must be positive"));
        }
        let cells = period * period;
        Ok(Self { period, channel, quality, mean: vec![0.0; cells], m2: vec![0.0; cells], count: vec![0; cells] })
    }

    /// Adds one plane pair. Both planes are `h×w`, aligned to the block grid.
    pub fn add_plane(&mut self, original: &[f64], degraded: &[f64], h: usize, w: usize) -> Result<()> {
        if original.len() != h * w || degraded.len() != h * w {
            return Err(Error::shape("plane length does not match its dimensions"));
        }
        if h < self.period || w < self.period {
            return Err(Error::invalid(format!("{h}x{w} plane is smaller than the period {}", self.period)));
        }
        let p = self.period;
        for y in 0..h {
            let row = (y % p) * p;
            for x in 0..w {
                let d = original[y * w + x] - degraded[y * w + x];
                let cell = row + x % p;
                self.count[cell] += 1;
                let delta = d - self.mean[cell];
                self.mean[cell] += delta / self.count[cell] as f64;
                self.m2[cell] += delta * (d - self.mean[cell]);
            }
        }
        Ok(())
    }

    /// Adds one image pair, taking the plane named by the accumulator's channel.
    pub fn add_pair(&mut self, original: &PlanarImage, degraded: &PlanarImage) -> Result<()> {
        let (h, w) = (original.height(), original.width());
        if (degraded.height(), degraded.width()) != (h, w) {
            return Err(Error::shape("original and degraded images differ in size"));
        }
        match self.channel {
            LabelChannel::Luma => {
                let a = codec::color::luma_plane(original)?;
                let b = codec::color::luma_plane(degraded)?;
                self.add_plane(a.plane(0), b.plane(0), h, w)
            }
            c => {
                let idx = LabelChannel::RGB.iter().position(|&k| k == c).expect("rgb channel");
                self.add_plane(original.plane(idx), degraded.plane(idx), h, w)
            }
        }
    }

    pub fn finish(&self) -> Result<StdDevGrid> {
        if self.count.contains(&0) {
            return Err(Error::invalid("some grid cells received no samples"));
        }
        let sigma = self.m2.iter().zip(&self.count).map(|(&m2, &n)| (m2 / n as f64).max(0.0).sqrt()).collect();
        Ok(StdDevGrid {
            sigma,
            period: self.period,
            channel: self.channel,
            quality: self.quality,
            sample_count: self.count.clone(),
        })
    }
}

fn check_corpus(corpus: &[PlanarImage]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    Ok(())
}

/// Estimates the grid for one channel by degrading every corpus image at `q`.
pub fn estimate_stddev(corpus: &[PlanarImage], q: u32, channel: LabelChannel, period: usize) -> Result<StdDevGrid> {
    check_corpus(corpus)?;
    let mut acc = StdDevAccumulator::new(period, channel, q)?;
    for image in corpus {
        let degraded = codec::degrade(image, q)?.image;
        acc.add_pair(image, &degraded)?;
    }
    acc.finish()
}

/// R, G and B grids with one degradation per image.
pub fn estimate_rgb_grids(corpus: &[PlanarImage], q: u32, period: usize) -> Result<[StdDevGrid; 3]> {
    let degraded = corpus.iter().map(|img| codec::degrade(img, q).map(|d| d.image)).collect::<Result<Vec<_>>>()?;
    rgb_grids_from_pairs(corpus, &degraded, q, period)
}

/// R, G and B grids from already degraded pairs.
pub fn rgb_grids_from_pairs(
    originals: &[PlanarImage],
    degraded: &[PlanarImage],
    q: u32,
    period: usize,
) -> Result<[StdDevGrid; 3]> {
    check_corpus(originals)?;
    if originals.len() != degraded.len() {
        return Err(Error::shape("original and degraded corpora differ in length"));
    }
    let mut accs = Vec::with_capacity(3);
    for c in LabelChannel::RGB {
        accs.push(StdDevAccumulator::new(period, c, q)?);
    }
    for (o, d) in originals.iter().zip(degraded) {
        for acc in accs.iter_mut() {
            acc.add_pair(o, d)?;
        }
    }
    Ok([accs[0].finish()?, accs[1].finish()?, accs[2].finish()?])
}

/// A tiled label map in byte units, stored plane by plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub period: usize,
    pub mode: LabelMode,
    pub quality: u32,
}

impl LabelMap {
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

fn check_grids(grids: &[StdDevGrid]) -> Result<(usize, u32)> {
    let first = grids.first().ok_or_else(|| Error::invalid("no grids given"))?;
    for g in grids {
        if g.period != first.period || g.quality != first.quality {
            return Err(Error::shape(format!(
                "grids disagree: period {} q {} vs period {} q {}",
                g.period, g.quality, first.period, first.quality
            )));
        }
        if g.sigma.len() != g.period * g.period {
            return Err(Error::shape("grid size does not match its period"));
        }
    }
    Ok((first.period, first.quality))
}

/// Tiles `grids` over an `h×w` window whose top-left pixel sits at absolute
/// position `(x0, y0)`.
///
/// `MultiChannel` gives one plane per grid; `Simplified` gives the
/// per-position Euclidean norm across the grids; `None` gives no planes.
pub fn build_label_map_at(
    grids: &[StdDevGrid],
    height: usize,
    width: usize,
    mode: LabelMode,
    offset: (usize, usize),
) -> Result<LabelMap> {
    let (period, quality) = check_grids(grids)?;
    if height == 0 || width == 0 {
        return Err(Error::invalid("empty label map"));
    }
    let (x0, y0) = offset;
    let n = height * width;
    let channels = mode.channels(grids.len());
    let mut data = vec![0.0; channels * n];
    match mode {
        LabelMode::None => {}
        LabelMode::MultiChannel => {
            for (c, g) in grids.iter().enumerate() {
                for y in 0..height {
                    for x in 0..width {
                        data[c * n + y * width + x] = g.at(x0 + x, y0 + y);
                    }
                }
            }
        }
        LabelMode::Simplified => {
            for y in 0..height {
                for x in 0..width {
                    let sq: f64 = grids.iter().map(|g| g.at(x0 + x, y0 + y).powi(2)).sum();
                    data[y * width + x] = sq.sqrt();
                }
            }
        }
    }
    Ok(LabelMap { data, height, width, channels, period, mode, quality })
}

/// [`build_label_map_at`] for a whole image (offset zero).
pub fn build_label_map(grids: &[StdDevGrid], height: usize, width: usize, mode: LabelMode) -> Result<LabelMap> {
    build_label_map_at(grids, height, width, mode, (0, 0))
}

/// Weight on the `qh` endpoint when interpolating to quality `q`.
pub fn interpolation_weight(ql: u32, qh: u32, q: u32) -> Result<f64> {
    if !(ql <= q && q <= qh) {
        return Err(Error::invalid(format!("quality {q} outside [{ql}, {qh}]")));
    }
    let (el, eh, e) = (quality_scale(ql)?, quality_scale(qh)?, quality_scale(q)?);
    if eh == el {
        return Err(Error::invalid(format!("qualities {ql} and {qh} share the same scale")));
    }
    Ok((e - el) / (eh - el))
}

fn lerp(lo: &[f64], hi: &[f64], t: f64) -> Vec<f64> {
    lo.iter().zip(hi).map(|(&a, &b)| (1.0 - t) * a + t * b).collect()
}

/// Linear interpolation of two label maps in quantization-scale space.
///
/// The endpoints are returned exactly when `q` equals `ql` or `qh`.
pub fn interpolate_label_map(low: &LabelMap, high: &LabelMap, q: u32) -> Result<LabelMap> {
    if (low.height, low.width, low.channels, low.mode) != (high.height, high.width, high.channels, high.mode) {
        return Err(Error::shape("label maps differ in shape or mode"));
    }
    if q == low.quality {
        return Ok(low.clone());
    }
    if q == high.quality {
        return Ok(high.clone());
    }
    let t = interpolation_weight(low.quality, high.quality, q)?;
    Ok(LabelMap { data: lerp(&low.data, &high.data, t), quality: q, ..low.clone() })
}

/// Interpolates grids the same way as [`interpolate_label_map`]; tiling
/// commutes with the blend, so this is the cheap path for per-sample maps.
pub fn interpolate_grid(low: &StdDevGrid, high: &StdDevGrid, q: u32) -> Result<StdDevGrid> {
    if (low.period, low.channel) != (high.period, high.channel) {
        return Err(Error::shape("grids differ in period or channel"));
    }
    if q == low.quality {
        return Ok(low.clone());
    }
    if q == high.quality {
        return Ok(high.clone());
    }
    let t = interpolation_weight(low.quality, high.quality, q)?;
    let sample_count = low.sample_count.iter().zip(&high.sample_count).map(|(&a, &b)| a.min(b)).collect();
    Ok(StdDevGrid { sigma: lerp(&low.sigma, &high.sigma, t), quality: q, sample_count, ..low.clone() })
}

/// σ-grids at one or more anchor qualities; grids for qualities in between
/// are interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrior {
    anchors: Vec<(u32, Vec<StdDevGrid>)>,
}

impl LabelPrior {
    /// `anchors` pairs a quality with its grids (R,G,B or a single luma grid).
    pub fn new(mut anchors: Vec<(u32, Vec<StdDevGrid>)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::invalid("label prior needs at least one anchor quality"));
        }
        anchors.sort_by_key(|(q, _)| *q);
        let count = anchors[0].1.len();
        for (q, grids) in &anchors {
            if grids.len() != count {
                return Err(Error::shape("anchors carry different numbers of grids"));
            }
            let (_, gq) = check_grids(grids)?;
            if gq != *q {
                return Err(Error::invalid(format!("anchor {q} holds grids estimated at q={gq}")));
            }
        }
        if anchors.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate anchor quality"));
        }
        Ok(Self { anchors })
    }

    pub fn anchors(&self) -> &[(u32, Vec<StdDevGrid>)] {
        &self.anchors
    }

    pub fn qualities(&self) -> Vec<u32> {
        self.anchors.iter().map(|(q, _)| *q).collect()
    }

    pub fn grid_count(&self) -> usize {
        self.anchors[0].1.len()
    }

    /// Grids for quality `q`: an anchor's grids exactly, or a blend of the
    /// two anchors bracketing `q`.
    pub fn grids_for(&self, q: u32) -> Result<Vec<StdDevGrid>> {
        if let Some((_, g)) = self.anchors.iter().find(|(aq, _)| *aq == q) {
            return Ok(g.clone());
        }
        let hi = self.anchors.iter().position(|(aq, _)| *aq > q);
        match hi {
            Some(i) if i > 0 => {
                let (lo, hi) = (&self.anchors[i - 1].1, &self.anchors[i].1);
                lo.iter().zip(hi).map(|(a, b)| interpolate_grid(a, b, q)).collect()
            }
            _ => Err(Error::invalid(format!("quality {q} is outside the label prior's range {:?}", self.qualities()))),
        }
    }

    /// Label map for an `h×w` window at absolute offset `(x0, y0)`.
    pub fn label_map(&self, q: u32, height: usize, width: usize, mode: LabelMode, offset: (usize, usize)) -> Result<LabelMap> {
        build_label_map_at(&self.grids_for(q)?, height, width, mode, offset)
    }

    /// `q` moved into the prior's anchor range.
    pub fn clamp_quality(&self, q: u32) -> u32 {
        let (lo, hi) = (self.anchors[0].0, self.anchors[self.anchors.len() - 1].0);
        q.clamp(lo, hi)
    }

    /// [`LabelPrior::label_map`] with `q` clamped into the anchor range, so a
    /// fixed-quality model sees the labels it was trained with at any quality.
    pub fn label_map_clamped(&self, q: u32, height: usize, width: usize, mode: LabelMode, offset: (usize, usize)) -> Result<LabelMap> {
        self.label_map(self.clamp_quality(q), height, width, mode, offset)
    }

    /// Rounds every σ to single precision so the prior survives a trip
    /// through a single-precision weight file unchanged.
    pub fn rounded_to_f32(mut self) -> Self {
        for (_, grids) in &mut self.anchors {
            for g in grids {
                g.sigma.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
        self
    }
}

/// Pearson correlation of two equally long samples; 1 if both are constant and equal.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

/// Shape summary of a grid: quadrant periodicity and corner/center contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct GridShape {
    /// Pairwise correlations of the four `ω/2` quadrants (six pairs); empty for odd periods.
    pub quadrant_correlations: Vec<f64>,
    /// Mean of the four corner cells of the 8×8 phase grid.
    pub corner_mean: f64,
    /// Mean of the central 2×2 cells of the 8×8 phase grid.
    pub center_mean: f64,
}

impl GridShape {
    pub fn min_quadrant_correlation(&self) -> f64 {
        self.quadrant_correlations.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn corners_exceed_center(&self) -> bool {
        self.corner_mean > self.center_mean
    }
}

/// Averages a grid whose period is a multiple of 8 down to the 8×8 block phase.
pub fn fold_to_block_phase(grid: &StdDevGrid) -> Result<Vec<f64>> {
    if grid.period % 8 != 0 {
        return Err(Error::invalid(format!("period {} is not a multiple of 8", grid.period)));
    }
    let p = grid.period;
    let reps = ((p / 8) * (p / 8)) as f64;
    let mut out = vec![0.0; 64];
    for y in 0..p {
        for x in 0..p {
            out[(y % 8) * 8 + x % 8] += grid.sigma[y * p + x] / reps;
        }
    }
    Ok(out)
}

pub fn grid_shape(grid: &StdDevGrid) -> Result<GridShape> {
    let p = grid.period;
    let mut quadrant_correlations = Vec::new();
    if p % 2 == 0 {
        let h = p / 2;
        let quads: Vec<Vec<f64>> = [(0, 0), (0, h), (h, 0), (h, h)]
            .iter()
            .map(|&(qy, qx)| (0..h).flat_map(|y| (0..h).map(move |x| (y, x))).map(|(y, x)| grid.sigma[(qy + y) * p + qx + x]).collect())
            .collect();
        for i in 0..4 {
            for j in i + 1..4 {
                quadrant_correlations.push(pearson(&quads[i], &quads[j]));
            }
        }
    }
    let phase = fold_to_block_phase(grid)?;
    let corner_mean = [0, 7, 56, 63].iter().map(|&i| phase[i]).sum::<f64>() / 4.0;
    let center_mean = [27, 28, 35, 36].iter().map(|&i| phase[i]).sum::<f64>() / 4.0;
    Ok(GridShape { quadrant_correlations, corner_mean, center_mean })
}

impl fmt::Display for StdDevGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Label planes for a `Unit`-range network input: the map divided by 255.
pub fn label_planes_unit(map: &LabelMap) -> Vec<f32> {
    map.data.iter().map(|&v| (v / SampleRange::Unit.to_byte_factor()) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;
    use crate::synth::natural_corpus;

    fn grid(value: f64, channel: LabelChannel) -> StdDevGrid {
        StdDevGrid::constant(16, channel, 20, value).unwrap()
    }

    #[test]
    fn constant_corpus_gives_zero_grid() {
        // Degradation maps a constant image to a constant, so every cell sees
        // one repeated difference as long as the corpus shares a colour.
        let corpus: Vec<_> = [(40, 48), (33, 17)]
            .iter()
            .map(|&(h, w)| {
                let mut data = vec![10.0; h * w];
                data.extend(vec![200.0; h * w]);
                data.extend(vec![90.0; h * w]);
                PlanarImage::new(h, w, 3, ColorSpace::Rgb, SampleRange::Byte, data).unwrap()
            })
            .collect();
        for ch in [LabelChannel::R, LabelChannel::Luma] {
            let g = estimate_stddev(&corpus, 20, ch, 16).unwrap();
            assert!(g.sigma.iter().all(|&s| s == 0.0), "{ch:?}");
            assert!(g.min_samples() >= 1);
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(estimate_stddev(&[], 20, LabelChannel::R, 8).is_err());
    }

    #[test]
    fn accumulator_matches_direct_population_std() {
        let corpus = natural_corpus(2, 32, 32, 3);
        let grid = estimate_stddev(&corpus, 30, LabelChannel::G, 8).unwrap();
        let degraded: Vec<_> = corpus.iter().map(|i| codec::degrade(i, 30).unwrap().image).collect();
        let (cx, cy) = (5, 2);
        let mut diffs = Vec::new();
        for (o, d) in corpus.iter().zip(&degraded) {
            for y in (cy..32).step_by(8) {
                for x in (cx..32).step_by(8) {
                    diffs.push(o.get(1, y, x) - d.get(1, y, x));
                }
            }
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        assert!((grid.at(cx, cy) - var.sqrt()).abs() < 1e-9);
        assert_eq!(grid.sample_count[cy * 8 + cx], diffs.len() as u64);
    }

    #[test]
    fn simplified_map_is_channel_norm() {
        let grids = [grid(3.0, LabelChannel::R), grid(4.0, LabelChannel::G), grid(0.0, LabelChannel::B)];
        let map = build_label_map(&grids, 20, 37, LabelMode::Simplified).unwrap();
        assert_eq!(map.channels, 1);
        assert!(map.data.iter().all(|&v| v == 5.0));
        let zero = build_label_map(&[grid(0.0, LabelChannel::R)], 5, 5, LabelMode::MultiChannel).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        assert_eq!(build_label_map(&grids, 4, 4, LabelMode::None).unwrap().channels, 0);
    }

    #[test]
    fn tiled_map_is_periodic_and_phase_aligned() {
        let corpus = natural_corpus(2, 48, 48, 9);
        let grids = estimate_rgb_grids(&corpus, 20, 16).unwrap();
        let map = build_label_map(&grids, 50, 70, LabelMode::MultiChannel).unwrap();
        for c in 0..3 {
            for y in 0..50 - 16 {
                for x in 0..70 - 16 {
                    assert_eq!(map.get(c, y, x), map.get(c, y, x + 16));
                    assert_eq!(map.get(c, y, x), map.get(c, y + 16, x));
                }
            }
        }
        let crop = build_label_map_at(&grids, 16, 16, LabelMode::MultiChannel, (17, 9)).unwrap();
        assert_eq!(crop.get(0, 0, 0), grids[0].sigma[9 * 16 + 1]);
        let shifted = build_label_map_at(&grids, 16, 16, LabelMode::MultiChannel, (33, 9)).unwrap();
        assert_eq!(crop, shifted);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = grid(1.0, LabelChannel::R);
        let b = StdDevGrid::constant(8, LabelChannel::G, 20, 1.0).unwrap();
        assert!(build_label_map(&[a.clone(), b], 8, 8, LabelMode::MultiChannel).is_err());
        let mut c = a.clone();
        c.quality = 10;
        assert!(build_label_map(&[a, c], 8, 8, LabelMode::Simplified).is_err());
    }

    #[test]
    fn interpolation_weights_and_endpoints() {
        let w = interpolation_weight(5, 20, 10).unwrap();
        assert!((w - 2.0 / 3.0).abs() < 1e-15);
        let mut lo = build_label_map(&[grid(1.0, LabelChannel::R)], 4, 4, LabelMode::MultiChannel).unwrap();
        lo.quality = 5;
        let hi = LabelMap { data: vec![4.0; 16], quality: 20, ..lo.clone() };
        assert_eq!(interpolate_label_map(&lo, &hi, 5).unwrap(), lo);
        assert_eq!(interpolate_label_map(&lo, &hi, 20).unwrap(), hi);
        let mid = interpolate_label_map(&lo, &hi, 10).unwrap();
        assert!(mid.data.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert!(interpolate_label_map(&lo, &hi, 21).is_err());
        assert!(interpolation_weight(20, 20, 20).is_err());
    }

    #[test]
    fn grid_text_round_trip() {
        let corpus = natural_corpus(1, 32, 32, 4);
        let g = estimate_stddev(&corpus, 20, LabelChannel::Luma, 8).unwrap();
        let back = StdDevGrid::from_text(&g.to_text()).unwrap();
        assert_eq!(back.sigma, g.sigma);
        assert_eq!((back.period, back.channel, back.quality), (8, LabelChannel::Luma, 20));
        assert!(StdDevGrid::from_text("# q=20 channel=R omega=2 sample_count=1\n1 2\n").is_err());
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn prior_interpolates_between_anchors() {
        let lo = vec![StdDevGrid::constant(16, LabelChannel::R, 5, 6.0).unwrap()];
        let hi = vec![StdDevGrid::constant(16, LabelChannel::R, 20, 3.0).unwrap()];
        let prior = LabelPrior::new(vec![(20, hi.clone()), (5, lo.clone())]).unwrap();
        assert_eq!(prior.qualities(), vec![5, 20]);
        assert_eq!(prior.grids_for(5).unwrap(), lo);
        assert_eq!(prior.grids_for(20).unwrap(), hi);
        let mid = prior.grids_for(10).unwrap();
        assert!((mid[0].sigma[0] - (6.0 / 3.0 + 3.0 * 2.0 / 3.0)).abs() < 1e-12);
        assert!(prior.grids_for(21).is_err());
        assert!(prior.grids_for(4).is_err());
        assert_eq!(prior.clamp_quality(4), 5);
        assert_eq!(prior.clamp_quality(90), 20);
        assert_eq!(
            prior.label_map_clamped(90, 8, 8, LabelMode::MultiChannel, (0, 0)).unwrap(),
            prior.label_map(20, 8, 8, LabelMode::MultiChannel, (0, 0)).unwrap()
        );
        assert!(LabelPrior::new(vec![(10, lo)]).is_err());
    }
}
