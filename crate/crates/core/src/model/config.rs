use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{parse_bool, KeyValues};
use crate::labeling::LabelMode;

/// How many relative-loss estimators the DCT branch uses for chroma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChromaMode {
    /// Separate Cb and Cr estimators.
    FullCorrection,
    /// One estimator for the combined chroma loss.
    SimpleCorrection,
}

/// Which correction branches a DCU has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchMode {
    PixelOnly,
    PixelPlusLumaDCT,
    DualDomain,
}

/// Colour network or luma-only network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelMode {
    Color,
    LumaOnly,
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    _ => Err(Error::invalid(format!(concat!("unknown ", $what, " `{}`"), s))),
                }
            }
        }
    };
}

named_enum!(ChromaMode, "chroma mode", ChromaMode::FullCorrection => "full", ChromaMode::SimpleCorrection => "simple");
named_enum!(BranchMode, "branch mode", BranchMode::PixelOnly => "pixel", BranchMode::PixelPlusLumaDCT => "pixel+luma", BranchMode::DualDomain => "dual");
named_enum!(ChannelMode, "channel mode", ChannelMode::Color => "color", ChannelMode::LumaOnly => "luma");

/// Which quantization table a relative-loss estimator translates with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReuKind {
    Luma,
    Chroma,
    Cb,
    Cr,
}

impl ReuKind {
    pub fn name(self) -> &'static str {
        match self {
            ReuKind::Luma => "reu_y",
            ReuKind::Chroma => "reu_c",
            ReuKind::Cb => "reu_cb",
            ReuKind::Cr => "reu_cr",
        }
    }

    pub fn uses_luma_table(self) -> bool {
        self == ReuKind::Luma
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Number of DCUs.
    pub n: usize,
    /// Growth rate of the dense block.
    pub k: usize,
    /// Convolutions in the shared feature extractor (dense layers plus transition).
    pub l: usize,
    /// Base filter count.
    pub b: usize,
    pub labeling: LabelMode,
    pub chroma: ChromaMode,
    pub dilation: bool,
    pub branch: BranchMode,
    pub channels: ChannelMode,
    pub residual_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 8,
            k: 64,
            l: 8,
            b: 64,
            labeling: LabelMode::Simplified,
            chroma: ChromaMode::SimpleCorrection,
            dilation: true,
            branch: BranchMode::DualDomain,
            channels: ChannelMode::Color,
            residual_scale: 0.1,
        }
    }
}

/// Relative-loss fields are 64 channels: one per DCT coefficient.
pub const REU_CHANNELS: usize = 64;

impl ModelConfig {
    /// The desk-scale network used for quick training runs.
    pub fn tiny() -> Self {
        Self { n: 2, k: 16, l: 4, b: 32, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 3 || self.k == 0 || self.n == 0 || self.b == 0 {
            return Err(Error::invalid(format!(
                "need L >= 3 and positive N, K, B (got N={} K={} L={} B={})",
                self.n, self.k, self.l, self.b
            )));
        }
        if !(self.residual_scale.is_finite()) {
            return Err(Error::invalid("residual scale must be finite"));
        }
        Ok(())
    }

    pub fn image_channels(&self) -> usize {
        match self.channels {
            ChannelMode::Color => 3,
            ChannelMode::LumaOnly => 1,
        }
    }

    /// Number of σ-grids the label map is built from (R,G,B or luma).
    pub fn label_grids(&self) -> usize {
        self.image_channels()
    }

    pub fn label_channels(&self) -> usize {
        self.labeling.channels(self.label_grids())
    }

    pub fn input_channels(&self) -> usize {
        self.image_channels() + self.label_channels()
    }

    /// Dilation of each dense layer: the first ⌊(L−1)/2⌋ at rate 1, then 2, 3, 4, …
    pub fn dense_dilations(&self) -> Vec<usize> {
        let layers = self.l - 1;
        let plain = layers / 2;
        (0..layers).map(|j| if self.dilation && j >= plain { j - plain + 2 } else { 1 }).collect()
    }

    /// Input channels of dense layer `j` (0-based).
    pub fn dense_in_channels(&self, j: usize) -> usize {
        if j == 0 {
            self.b
        } else {
            2 * self.k + (j - 1) * self.k
        }
    }

    pub fn dense_out_channels(&self, j: usize) -> usize {
        if j == 0 {
            2 * self.k
        } else {
            self.k
        }
    }

    pub fn transition_in_channels(&self) -> usize {
        2 * self.k + (self.l - 2) * self.k
    }

    /// Relative-loss estimators in each DCU, in evaluation order.
    pub fn reu_kinds(&self) -> Vec<ReuKind> {
        match (self.branch, self.channels) {
            (BranchMode::PixelOnly, _) => vec![],
            (BranchMode::PixelPlusLumaDCT, _) | (_, ChannelMode::LumaOnly) => vec![ReuKind::Luma],
            (BranchMode::DualDomain, ChannelMode::Color) => match self.chroma {
                ChromaMode::SimpleCorrection => vec![ReuKind::Luma, ReuKind::Chroma],
                ChromaMode::FullCorrection => vec![ReuKind::Luma, ReuKind::Cb, ReuKind::Cr],
            },
        }
    }

    pub fn has_dct_branch(&self) -> bool {
        self.branch != BranchMode::PixelOnly
    }

    /// Trainable convolution layers implied by the configuration.
    pub fn conv_layer_count(&self) -> usize {
        let reus = self.reu_kinds().len();
        let fusion = usize::from(reus > 0);
        // FE1, FE2, FD1, FD2 plus, per DCU: dense layers, transition, REUs, fusion, pixel branch.
        4 + self.n * (self.l - 1 + 1 + reus + fusion + 1)
    }

    /// Key-value text accepted by [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "l = {}", self.l);
        let _ = writeln!(s, "b = {}", self.b);
        let _ = writeln!(s, "labeling = {}", self.labeling.name());
        let _ = writeln!(s, "chroma = {}", self.chroma.name());
        let _ = writeln!(s, "dilation = {}", self.dilation);
        let _ = writeln!(s, "branch = {}", self.branch.name());
        let _ = writeln!(s, "channels = {}", self.channels.name());
        let _ = writeln!(s, "residual_scale = {:?}", self.residual_scale);
        s
    }

    /// Reads a config, taking defaults for absent keys.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text, "model config")?;
        let c = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    /// Consumes the model keys of a shared key-value file.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        let dilation = match kv.take::<String>("dilation")? {
            Some(s) => parse_bool(&s)?,
            None => d.dilation,
        };
        let c = Self {
            n: kv.take_or("n", d.n)?,
            k: kv.take_or("k", d.k)?,
            l: kv.take_or("l", d.l)?,
            b: kv.take_or("b", d.b)?,
            labeling: kv.take_or("labeling", d.labeling)?,
            chroma: kv.take_or("chroma", d.chroma)?,
            dilation,
            branch: kv.take_or("branch", d.branch)?,
            channels: kv.take_or("channels", d.channels)?,
            residual_scale: kv.take_or("residual_scale", d.residual_scale)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_structure() {
        let c = ModelConfig::default();
        assert_eq!(c.conv_layer_count(), 100);
        assert_eq!(c.conv_layer_count(), 4 + c.n * (c.l + 4));
        assert_eq!(c.transition_in_channels(), 512);
        assert_eq!(c.dense_dilations(), vec![1, 1, 1, 2, 3, 4, 5]);
        assert_eq!(ModelConfig { dilation: false, ..c }.dense_dilations(), vec![1; 7]);
        assert_eq!(c.input_channels(), 4);
    }

    #[test]
    fn text_round_trip_and_validation() {
        let c = ModelConfig { n: 3, labeling: LabelMode::MultiChannel, chroma: ChromaMode::FullCorrection, ..ModelConfig::tiny() };
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(ModelConfig::from_text("l = 2").is_err());
        assert!(ModelConfig::from_text("colour = 1").is_err());
        assert_eq!(ModelConfig::from_text("").unwrap(), ModelConfig::default());
    }

    #[test]
    fn reu_sets_per_mode() {
        let c = ModelConfig::default();
        assert_eq!(ModelConfig { branch: BranchMode::PixelOnly, ..c }.reu_kinds(), vec![]);
        assert_eq!(ModelConfig { branch: BranchMode::PixelPlusLumaDCT, ..c }.reu_kinds(), vec![ReuKind::Luma]);
        assert_eq!(ModelConfig { channels: ChannelMode::LumaOnly, ..c }.reu_kinds(), vec![ReuKind::Luma]);
        assert_eq!(ModelConfig { chroma: ChromaMode::FullCorrection, ..c }.reu_kinds().len(), 3);
    }
}
