//! Weight files: a text manifest followed by raw little-endian `f32` blocks.
//!
//! ```text
//! IDCN-WEIGHTS
//! version = 1
//! [config]
//! n = 2
//! ...
//! [meta]
//! epoch = 12
//! [blocks]
//! fe1.weight 32,4,5,5 0 3200 9f1c03aa
//! label/q10/R 16,16 ...
//! [data]
//! <concatenated blocks>
//! ```
//!
//! Block lines are `name shape offset length crc32` with offsets and lengths
//! in values (not bytes) relative to the start of the data section.
//! Translation kernels are not stored; they are rebuilt from the quality.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::ModelConfig;
use super::network::Idcn;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::labeling::{LabelChannel, LabelPrior, StdDevGrid};

const MAGIC: &str = "IDCN-WEIGHTS";
pub const FORMAT_VERSION: u32 = 1;
const LABEL_PREFIX: &str = "label/q";

/// Everything needed to run a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    /// σ-grids for building label maps; absent when the model uses no labels.
    pub prior: Option<LabelPrior>,
    /// Free-form training metadata (epoch, learning rate, …).
    pub meta: BTreeMap<String, String>,
}

impl ModelWeights {
    pub fn from_network(net: &Idcn<f32>, prior: Option<LabelPrior>) -> Self {
        Self { config: *net.config(), params: net.params().clone(), prior, meta: BTreeMap::new() }
    }

    pub fn network(&self) -> Result<Idcn<f32>> {
        Idcn::from_params(self.config, &self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blocks: Vec<(String, Vec<usize>, Vec<f32>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.shape.clone(), p.value.clone()))
            .collect();
        if let Some(prior) = &self.prior {
            for (q, grids) in prior.anchors() {
                for g in grids {
                    blocks.push((
                        format!("{LABEL_PREFIX}{q}/{}", g.channel.name()),
                        vec![g.period, g.period],
                        g.sigma.iter().map(|&v| v as f32).collect(),
                    ));
                }
            }
        }

        let mut head = String::new();
        let _ = writeln!(head, "{MAGIC}");
        let _ = writeln!(head, "version = {FORMAT_VERSION}");
        let _ = writeln!(head, "[config]");
        head.push_str(&self.config.to_text());
        let _ = writeln!(head, "[meta]");
        for (k, v) in &self.meta {
            let _ = writeln!(head, "{k} = {v}");
        }
        let _ = writeln!(head, "[blocks]");
        let mut data = Vec::new();
        let mut offset = 0usize;
        for (name, shape, values) in &blocks {
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            let crc = crc32fast::hash(&bytes);
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(head, "{name} {} {offset} {} {crc:08x}", dims.join(","), values.len());
            offset += values.len();
            data.extend(bytes);
        }
        let _ = writeln!(head, "[data]");
        let mut out = head.into_bytes();
        out.extend(data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("weight file", d);
        let marker = b"[data]\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing [data] section".into()))?;
        let head = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("manifest is not UTF-8".into()))?;
        let data = &bytes[split + marker.len()..];

        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing magic line".into()));
        }
        let version = lines.next().and_then(|l| l.strip_prefix("version = ")).ok_or_else(|| bad("missing version".into()))?;
        if version.trim() != FORMAT_VERSION.to_string() {
            return Err(Error::Version(version.trim().to_string()));
        }

        let mut section = "";
        let (mut config_text, mut meta, mut entries) = (String::new(), BTreeMap::new(), Vec::new());
        for line in lines {
            if line.starts_with('[') {
                section = line;
                continue;
            }
            match section {
                "[config]" => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
                "[meta]" => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("meta line `{line}`")))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                "[blocks]" => entries.push(parse_block_line(line)?),
                _ => return Err(bad(format!("unexpected line `{line}`"))),
            }
        }
        let config = ModelConfig::from_text(&config_text)?;

        let mut params = ParamStore::new();
        let mut anchors: BTreeMap<u32, Vec<StdDevGrid>> = BTreeMap::new();
        for e in entries {
            let start = e.offset.checked_mul(4).ok_or_else(|| bad("offset overflow".into()))?;
            let end = start + e.len * 4;
            let raw = data.get(start..end).ok_or_else(|| bad(format!("block `{}` runs past the end", e.name)))?;
            let actual = crc32fast::hash(raw);
            if actual != e.crc {
                return Err(Error::Checksum { name: e.name, expected: e.crc, actual });
            }
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::shape(format!("block `{}` shape {:?} does not hold {} values", e.name, e.shape, e.len)));
            }
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if let Some(rest) = e.name.strip_prefix(LABEL_PREFIX) {
                let (q, ch) = rest.split_once('/').ok_or_else(|| bad(format!("label block `{}`", e.name)))?;
                let q: u32 = q.parse().map_err(|_| bad(format!("label block `{}`", e.name)))?;
                let channel: LabelChannel = ch.parse()?;
                let period = e.shape[0];
                if e.shape.len() != 2 || e.shape[1] != period {
                    return Err(Error::shape(format!("label block `{}` is not square", e.name)));
                }
                anchors.entry(q).or_default().push(StdDevGrid {
                    sigma: values.iter().map(|&v| v as f64).collect(),
                    period,
                    channel,
                    quality: q,
                    sample_count: vec![1; period * period],
                });
            } else {
                params.add(e.name, e.shape, values, true)?;
            }
        }
        let prior = if anchors.is_empty() { None } else { Some(LabelPrior::new(anchors.into_iter().collect())?) };
        let weights = Self { config, params, prior, meta };
        // Validates names and shapes against the configuration.
        weights.network()?;
        if config.label_channels() > 0 {
            match &weights.prior {
                Some(p) if p.grid_count() == config.label_grids() => {}
                _ => return Err(Error::shape(format!("model needs {} label grids per quality", config.label_grids()))),
            }
        }
        Ok(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct BlockEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    crc: u32,
}

fn parse_block_line(line: &str) -> Result<BlockEntry> {
    let bad = || Error::format("weight file", format!("block line `{line}`"));
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 5 {
        return Err(bad());
    }
    let shape = f[1].split(',').map(|d| d.parse::<usize>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
    Ok(BlockEntry {
        name: f[0].to_string(),
        shape,
        offset: f[2].parse().map_err(|_| bad())?,
        len: f[3].parse().map_err(|_| bad())?,
        crc: u32::from_str_radix(f[4], 16).map_err(|_| bad())?,
    })
}
