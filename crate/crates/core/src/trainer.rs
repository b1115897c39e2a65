//! Patch-based training with a plateau-driven learning-rate schedule.
//!
//! Each epoch runs a fixed number of Adam steps on random crops, then
//! measures PSNR on full validation images. When the PSNR gain stays below
//! `plateau_epsilon_db` for `plateau_patience` consecutive epochs the
//! learning rate is divided by `lr_divisor`. The first time the rate hits
//! `lr_floor` the trainer switches to the second-stage patch and batch
//! sizes; a further plateau at the floor ends training.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Graph, Shape, Tape, Tensor};
use crate::codec::{self, color::luma_plane};
use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::kv::KeyValues;
use crate::labeling::{self, LabelChannel, LabelMap, LabelMode, LabelPrior, StdDevAccumulator};
use crate::metrics;
use crate::model::{network_input, ChannelMode, Idcn, KernelCache, ModelConfig, ModelWeights};

/// Period of the label grids used for training.
pub const LABEL_PERIOD: usize = 16;

/// A single quality or an inclusive range of qualities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualitySpec {
    Fixed(u32),
    Range(u32, u32),
}

impl QualitySpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(1..=100).contains(&lo) || !(1..=100).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!("bad quality specification {self}")));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (u32, u32) {
        match *self {
            QualitySpec::Fixed(q) => (q, q),
            QualitySpec::Range(lo, hi) => (lo, hi),
        }
    }

    /// Qualities at which label grids are estimated.
    pub fn anchors(&self) -> Vec<u32> {
        let (lo, hi) = self.bounds();
        if lo == hi {
            vec![lo]
        } else {
            vec![lo, hi]
        }
    }

    /// Qualities evaluated during validation: the endpoints and the midpoint.
    pub fn validation_qualities(&self) -> Vec<u32> {
        let (lo, hi) = self.bounds();
        let mut qs = vec![lo, lo + (hi - lo) / 2, hi];
        qs.dedup();
        qs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let (lo, hi) = self.bounds();
        rng.random_range(lo..=hi)
    }
}

impl std::fmt::Display for QualitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QualitySpec::Fixed(q) => write!(f, "{q}"),
            QualitySpec::Range(lo, hi) => write!(f, "{lo}:{hi}"),
        }
    }
}

impl FromStr for QualitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("quality must be `q` or `lo:hi`, got `{s}`"));
        let spec = match s.split_once(':') {
            Some((lo, hi)) => {
                QualitySpec::Range(lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?)
            }
            None => QualitySpec::Fixed(s.trim().parse().map_err(|_| bad())?),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub quality: QualitySpec,
    pub patch_size: usize,
    pub patch_size_stage2: usize,
    pub batch_size: usize,
    pub batch_size_stage2: usize,
    pub batches_per_epoch: usize,
    pub lr_initial: f64,
    pub lr_divisor: f64,
    pub lr_floor: f64,
    pub plateau_epsilon_db: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    /// Wall-clock limit checked after each epoch. Runs that hit it are not
    /// reproducible; leave unset when bit-identical results matter.
    pub time_budget_secs: Option<f64>,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 20_200_607;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            quality: QualitySpec::Fixed(10),
            patch_size: 43,
            patch_size_stage2: 96,
            batch_size: 16,
            batch_size_stage2: 8,
            batches_per_epoch: 200,
            lr_initial: 1e-4,
            lr_divisor: 5.0,
            lr_floor: 1e-6,
            plateau_epsilon_db: 0.001,
            plateau_patience: 5,
            max_epochs: 100,
            time_budget_secs: None,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.quality.validate()?;
        if self.patch_size < LABEL_PERIOD || self.patch_size_stage2 < LABEL_PERIOD {
            return Err(Error::invalid(format!("patches must be at least {LABEL_PERIOD} pixels")));
        }
        if self.batch_size == 0 || self.batch_size_stage2 == 0 || self.batches_per_epoch == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch sizes, batches per epoch and max epochs must be positive"));
        }
        if !(self.lr_initial > 0.0 && self.lr_floor > 0.0 && self.lr_floor <= self.lr_initial && self.lr_divisor > 1.0) {
            return Err(Error::invalid("need 0 < lr_floor <= lr_initial and lr_divisor > 1"));
        }
        if self.plateau_patience == 0 || self.plateau_epsilon_db.is_nan() || self.plateau_epsilon_db < 0.0 {
            return Err(Error::invalid("plateau patience must be positive and epsilon non-negative"));
        }
        Ok(())
    }

    /// Consumes the training keys of a key-value file.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            quality: kv.take_or("quality", d.quality)?,
            patch_size: kv.take_or("patch_size", d.patch_size)?,
            patch_size_stage2: kv.take_or("patch_size_stage2", d.patch_size_stage2)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            batch_size_stage2: kv.take_or("batch_size_stage2", d.batch_size_stage2)?,
            batches_per_epoch: kv.take_or("batches_per_epoch", d.batches_per_epoch)?,
            lr_initial: kv.take_or("lr_initial", d.lr_initial)?,
            lr_divisor: kv.take_or("lr_divisor", d.lr_divisor)?,
            lr_floor: kv.take_or("lr_floor", d.lr_floor)?,
            plateau_epsilon_db: kv.take_or("plateau_epsilon_db", d.plateau_epsilon_db)?,
            plateau_patience: kv.take_or("plateau_patience", d.plateau_patience)?,
            max_epochs: kv.take_or("max_epochs", d.max_epochs)?,
            time_budget_secs: kv.take("time_budget_secs")?,
            seed: kv.take_or("seed", d.seed)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "quality = {}", self.quality);
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "patch_size_stage2 = {}", self.patch_size_stage2);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "batch_size_stage2 = {}", self.batch_size_stage2);
        let _ = writeln!(s, "batches_per_epoch = {}", self.batches_per_epoch);
        let _ = writeln!(s, "lr_initial = {:?}", self.lr_initial);
        let _ = writeln!(s, "lr_divisor = {:?}", self.lr_divisor);
        let _ = writeln!(s, "lr_floor = {:?}", self.lr_floor);
        let _ = writeln!(s, "plateau_epsilon_db = {:?}", self.plateau_epsilon_db);
        let _ = writeln!(s, "plateau_patience = {}", self.plateau_patience);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        if let Some(t) = self.time_budget_secs {
            let _ = writeln!(s, "time_budget_secs = {t:?}");
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

/// Weight-file metadata keys holding the training configuration.
pub const TRAIN_META_PREFIX: &str = "train.";

impl TrainConfig {
    /// The training configuration recorded in a weight file, if any.
    pub fn from_meta(weights: &ModelWeights) -> Result<Option<Self>> {
        let text: String = weights
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(TRAIN_META_PREFIX).map(|k| format!("{k} = {v}\n")))
            .collect();
        if text.is_empty() {
            return Ok(None);
        }
        let mut kv = KeyValues::parse(&text, "recorded training config")?;
        let c = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(Some(c))
    }
}

/// Parses one file holding both model and training keys.
pub fn parse_run_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let mut kv = KeyValues::parse(text, "run config")?;
    let model = ModelConfig::from_kv(&mut kv)?;
    let train = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    Ok((model, train))
}

/// What [`PlateauScheduler::observe`] decided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleEvent {
    Continue,
    /// The learning rate was divided; `at_floor` is set once it reaches the floor.
    Decayed { lr: f64, at_floor: bool },
    Stop,
}

/// Learning-rate control from per-epoch validation PSNR.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    divisor: f64,
    floor: f64,
    epsilon_db: f64,
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, divisor: f64, floor: f64, epsilon_db: f64, patience: usize) -> Self {
        Self { lr, divisor, floor, epsilon_db, patience, best: None, stale: 0 }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Self::new(c.lr_initial, c.lr_divisor, c.lr_floor, c.plateau_epsilon_db, c.plateau_patience)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr.max(self.floor);
    }

    pub fn at_floor(&self) -> bool {
        self.lr <= self.floor
    }

    /// Feeds one epoch's validation PSNR. An epoch is stale when it improves
    /// on the best PSNR so far by less than the epsilon.
    pub fn observe(&mut self, psnr_db: f64) -> ScheduleEvent {
        let gain = self.best.map_or(f64::INFINITY, |b| psnr_db - b);
        if self.best.is_none_or(|b| psnr_db > b) {
            self.best = Some(psnr_db);
        }
        if gain < self.epsilon_db {
            self.stale += 1;
        } else {
            self.stale = 0;
        }
        if self.stale < self.patience {
            return ScheduleEvent::Continue;
        }
        self.stale = 0;
        if self.at_floor() {
            return ScheduleEvent::Stop;
        }
        self.lr = (self.lr / self.divisor).max(self.floor);
        ScheduleEvent::Decayed { lr: self.lr, at_floor: self.at_floor() }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_psnr_db: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_mse,val_psnr_db\n");
    for r in history {
        let _ = writeln!(s, "{},{:e},{:.8e},{:.6}", r.epoch, r.lr, r.train_mse, r.val_psnr_db);
    }
    s
}

/// One training crop.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub clean: PlanarImage,
    pub degraded: PlanarImage,
    pub label: Option<LabelMap>,
    pub quality: u32,
    /// Absolute `(x, y)` of the crop's top-left pixel.
    pub offset: (usize, usize),
    pub image_index: usize,
}

/// Network-ready tensors for one batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub qualities: Vec<u32>,
}

/// Clean images plus lazily degraded versions, in the network's colour space.
struct Corpus {
    rgb: Vec<PlanarImage>,
    clean: Vec<PlanarImage>,
    degraded: HashMap<(usize, u32), Arc<PlanarImage>>,
    channels: ChannelMode,
}

impl Corpus {
    fn new(rgb: &[PlanarImage], channels: ChannelMode) -> Result<Self> {
        let clean = match channels {
            ChannelMode::Color => rgb.to_vec(),
            ChannelMode::LumaOnly => rgb.iter().map(luma_plane).collect::<Result<_>>()?,
        };
        Ok(Self { rgb: rgb.to_vec(), clean, degraded: HashMap::new(), channels })
    }

    fn len(&self) -> usize {
        self.rgb.len()
    }

    fn degraded_rgb(&self, i: usize, q: u32) -> Result<PlanarImage> {
        Ok(codec::degrade(&self.rgb[i], q)?.image)
    }

    fn degraded(&mut self, i: usize, q: u32) -> Result<Arc<PlanarImage>> {
        if let Some(d) = self.degraded.get(&(i, q)) {
            return Ok(d.clone());
        }
        let rgb = self.degraded_rgb(i, q)?;
        let img = match self.channels {
            ChannelMode::Color => rgb,
            ChannelMode::LumaOnly => luma_plane(&rgb)?,
        };
        let img = Arc::new(img);
        self.degraded.insert((i, q), img.clone());
        Ok(img)
    }
}

/// Estimates the label prior for `config` from `corpus` at `qualities`.
pub fn estimate_prior(corpus: &[PlanarImage], config: &ModelConfig, qualities: &[u32]) -> Result<LabelPrior> {
    let mut anchors = Vec::with_capacity(qualities.len());
    for &q in qualities {
        let grids = match config.channels {
            ChannelMode::Color => labeling::estimate_rgb_grids(corpus, q, LABEL_PERIOD)?.to_vec(),
            ChannelMode::LumaOnly => {
                let mut acc = StdDevAccumulator::new(LABEL_PERIOD, LabelChannel::Luma, q)?;
                for img in corpus {
                    acc.add_pair(img, &codec::degrade(img, q)?.image)?;
                }
                vec![acc.finish()?]
            }
        };
        anchors.push((q, grids));
    }
    Ok(LabelPrior::new(anchors)?.rounded_to_f32())
}

/// Label map for a whole image, or `None` when the model takes no labels.
/// Qualities outside the prior's range use the nearest anchor.
pub fn full_label_map(
    prior: Option<&LabelPrior>,
    mode: LabelMode,
    q: u32,
    height: usize,
    width: usize,
) -> Result<Option<LabelMap>> {
    match (mode, prior) {
        (LabelMode::None, _) => Ok(None),
        (_, Some(p)) => Ok(Some(p.label_map_clamped(q, height, width, mode, (0, 0))?)),
        (_, None) => Err(Error::invalid("model uses label maps but no label prior is available")),
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<EpochRecord>,
    /// Mean validation PSNR of the degraded inputs.
    pub baseline_psnr_db: f64,
}

/// Owns the network, optimizer and data for one training run.
pub struct Trainer {
    config: TrainConfig,
    net: Idcn<f32>,
    prior: Option<LabelPrior>,
    adam: Adam,
    scheduler: PlateauScheduler,
    train: Corpus,
    validation: Corpus,
    kernels: KernelCache<f32>,
    epoch: usize,
    stage2: bool,
    history: Vec<EpochRecord>,
    baseline_psnr_db: Option<f64>,
    started: Instant,
    done: bool,
}

impl Trainer {
    /// A fresh run. The label prior is estimated from the training corpus.
    pub fn new(config: TrainConfig, model: ModelConfig, train: &[PlanarImage], validation: &[PlanarImage]) -> Result<Self> {
        let net = Idcn::new(model, config.seed)?;
        let prior = if model.labeling == LabelMode::None {
            None
        } else {
            Some(estimate_prior(train, &model, &config.quality.anchors())?)
        };
        Self::assemble(config, net, prior, train, validation)
    }

    /// Continues from saved weights, keeping their epoch count, learning rate
    /// and stage. Optimizer moments and plateau counters start afresh.
    pub fn resume(config: TrainConfig, weights: &ModelWeights, train: &[PlanarImage], validation: &[PlanarImage]) -> Result<Self> {
        let net = weights.network()?;
        let mut t = Self::assemble(config, net, weights.prior.clone(), train, validation)?;
        let meta = |k: &str| weights.meta.get(k).ok_or_else(|| Error::format("weight file", format!("missing `{k}` metadata")));
        t.epoch = meta("epoch")?.parse().map_err(|_| Error::format("weight file", "bad `epoch` metadata"))?;
        let lr: f64 = meta("lr")?.parse().map_err(|_| Error::format("weight file", "bad `lr` metadata"))?;
        t.scheduler.set_lr(lr);
        t.stage2 = meta("stage")?.trim() == "2";
        Ok(t)
    }

    fn assemble(
        config: TrainConfig,
        net: Idcn<f32>,
        prior: Option<LabelPrior>,
        train: &[PlanarImage],
        validation: &[PlanarImage],
    ) -> Result<Self> {
        config.validate()?;
        let model = *net.config();
        if model.labeling != LabelMode::None {
            let (lo, hi) = config.quality.bounds();
            match &prior {
                Some(p) if p.grids_for(lo).is_ok() && p.grids_for(hi).is_ok() => {}
                _ => return Err(Error::invalid(format!("label prior does not cover qualities {}", config.quality))),
            }
        }
        if train.is_empty() || validation.is_empty() {
            return Err(Error::invalid("training and validation sets must be non-empty"));
        }
        let need = config.patch_size.max(config.patch_size_stage2);
        if let Some(img) = train.iter().find(|i| i.height() < need || i.width() < need) {
            return Err(Error::invalid(format!(
                "training image of {}x{} is smaller than the {need}-pixel patch",
                img.height(),
                img.width()
            )));
        }
        Ok(Self {
            scheduler: PlateauScheduler::from_config(&config),
            config,
            net,
            prior,
            adam: Adam::new(),
            train: Corpus::new(train, model.channels)?,
            validation: Corpus::new(validation, model.channels)?,
            kernels: KernelCache::new(),
            epoch: 0,
            stage2: false,
            history: Vec::new(),
            baseline_psnr_db: None,
            started: Instant::now(),
            done: false,
        })
    }

    pub fn network(&self) -> &Idcn<f32> {
        &self.net
    }

    pub fn prior(&self) -> Option<&LabelPrior> {
        self.prior.as_ref()
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr()
    }

    pub fn in_stage2(&self) -> bool {
        self.stage2
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Translation kernels built so far, keyed by quality.
    pub fn kernel_cache(&mut self) -> &mut KernelCache<f32> {
        &mut self.kernels
    }

    fn patch_and_batch(&self) -> (usize, usize) {
        if self.stage2 {
            (self.config.patch_size_stage2, self.config.batch_size_stage2)
        } else {
            (self.config.patch_size, self.config.batch_size)
        }
    }

    /// Random generator for batch `batch` of epoch `epoch` (1-based).
    fn batch_rng(&self, epoch: usize, batch: usize) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.config.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
        seed[16..24].copy_from_slice(&(batch as u64).to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// Draws the crops of one batch: uniform image, quality and offset.
    pub fn sample_pairs(&mut self, epoch: usize, batch: usize) -> Result<Vec<SamplePair>> {
        let (patch, size) = self.patch_and_batch();
        let mut rng = self.batch_rng(epoch, batch);
        let mode = self.net.config().labeling;
        let mut pairs = Vec::with_capacity(size);
        for _ in 0..size {
            let i = rng.random_range(0..self.train.len());
            let q = self.config.quality.sample(&mut rng);
            let clean = &self.train.clean[i];
            let y0 = rng.random_range(0..=clean.height() - patch);
            let x0 = rng.random_range(0..=clean.width() - patch);
            let clean = clean.crop(y0, x0, patch, patch)?;
            let degraded = self.train.degraded(i, q)?.crop(y0, x0, patch, patch)?;
            let label = match (mode, &self.prior) {
                (LabelMode::None, _) => None,
                (_, Some(p)) => Some(p.label_map(q, patch, patch, mode, (x0, y0))?),
                (_, None) => return Err(Error::invalid("missing label prior")),
            };
            pairs.push(SamplePair { clean, degraded, label, quality: q, offset: (x0, y0), image_index: i });
        }
        Ok(pairs)
    }

    pub fn assemble_batch(&self, pairs: &[SamplePair]) -> Result<Batch> {
        let config = self.net.config();
        let mut inputs = Vec::with_capacity(pairs.len());
        let mut targets = Vec::with_capacity(pairs.len());
        for p in pairs {
            inputs.push(network_input::<f32>(config, &p.degraded, p.label.as_ref())?);
            let shape = Shape::new(1, p.clean.channels(), p.clean.height(), p.clean.width());
            targets.push(Tensor::from_vec(shape, p.clean.data().iter().map(|&v| (v / 255.0) as f32).collect())?);
        }
        Ok(Batch {
            input: Tensor::stack(&inputs)?,
            target: Tensor::stack(&targets)?,
            qualities: pairs.iter().map(|p| p.quality).collect(),
        })
    }

    /// One Adam step; returns the batch loss.
    fn step(&mut self, batch: &Batch) -> Result<f64> {
        let tables = if self.net.config().has_dct_branch() { self.kernels.batch(&batch.qualities)? } else { Vec::new() };
        let mut tape = Tape::new();
        let x = tape.leaf(batch.input.clone());
        let y = tape.leaf(batch.target.clone());
        let out = self.net.forward(&mut tape, &x, &tables, None)?;
        let loss = tape.mse_loss(&out, &y)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch: self.epoch + 1, batch: 0, loss: value });
        }
        let params = self.net.params_mut();
        params.zero_grad();
        tape.backward(loss, params)?;
        drop(tape);
        self.adam.step(self.net.params_mut(), self.scheduler.lr())?;
        Ok(value)
    }

    fn validation_pairs(&self) -> Vec<(usize, u32)> {
        let qs = self.config.quality.validation_qualities();
        (0..self.validation.len()).flat_map(|i| qs.iter().map(move |&q| (i, q))).collect()
    }

    /// Mean PSNR of the degraded validation images against the clean ones.
    pub fn baseline_psnr(&mut self) -> Result<f64> {
        if let Some(b) = self.baseline_psnr_db {
            return Ok(b);
        }
        let pairs = self.validation_pairs();
        let mut total = 0.0;
        for &(i, q) in &pairs {
            let d = self.validation.degraded(i, q)?;
            total += metrics::psnr(&self.validation.clean[i], &d)?;
        }
        let b = total / pairs.len() as f64;
        self.baseline_psnr_db = Some(b);
        Ok(b)
    }

    /// Mean PSNR of restored validation images.
    pub fn validate(&mut self) -> Result<f64> {
        let pairs = self.validation_pairs();
        let mut total = 0.0;
        for &(i, q) in &pairs {
            let restored = self.restore_validation(i, q)?;
            total += metrics::psnr(&self.validation.clean[i], &restored)?;
        }
        Ok(total / pairs.len() as f64)
    }

    fn restore_validation(&mut self, i: usize, q: u32) -> Result<PlanarImage> {
        let degraded = self.validation.degraded(i, q)?;
        let config = *self.net.config();
        let label = full_label_map(self.prior.as_ref(), config.labeling, q, degraded.height(), degraded.width())?;
        self.net.restore(&degraded, label.as_ref(), q)
    }

    /// Trains one epoch, validates and applies the schedule.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.done {
            return Err(Error::invalid("training has already finished"));
        }
        let epoch = self.epoch + 1;
        let lr = self.scheduler.lr();
        let mut loss_sum = 0.0;
        for b in 0..self.config.batches_per_epoch {
            let pairs = self.sample_pairs(epoch, b)?;
            let batch = self.assemble_batch(&pairs)?;
            let loss = self.step(&batch).map_err(|e| match e {
                Error::Divergence { loss, .. } => Error::Divergence { epoch, batch: b, loss },
                e => e,
            })?;
            loss_sum += loss;
        }
        let val = self.validate()?;
        self.epoch = epoch;
        let record = EpochRecord { epoch, lr, train_mse: loss_sum / self.config.batches_per_epoch as f64, val_psnr_db: val };
        self.history.push(record.clone());
        log::info!(
            "epoch {epoch}: lr {lr:e}, train mse {:.6e}, validation psnr {val:.4} dB",
            record.train_mse
        );
        match self.scheduler.observe(val) {
            ScheduleEvent::Continue => {}
            ScheduleEvent::Decayed { lr, at_floor } => {
                log::info!("learning rate divided to {lr:e}");
                if at_floor && !self.stage2 {
                    self.stage2 = true;
                    log::info!("switching to {}-pixel patches, batch {}", self.config.patch_size_stage2, self.config.batch_size_stage2);
                }
            }
            ScheduleEvent::Stop => self.done = true,
        }
        if epoch >= self.config.max_epochs {
            self.done = true;
        }
        if let Some(budget) = self.config.time_budget_secs {
            if self.started.elapsed().as_secs_f64() >= budget {
                self.done = true;
            }
        }
        Ok(record)
    }

    /// Runs epochs until the schedule, epoch limit or time budget stops training.
    pub fn run(&mut self) -> Result<()> {
        self.baseline_psnr()?;
        while !self.done {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Current weights with resumable metadata.
    pub fn weights(&self) -> ModelWeights {
        let mut w = ModelWeights::from_network(&self.net, self.prior.clone());
        w.meta.insert("epoch".into(), self.epoch.to_string());
        w.meta.insert("lr".into(), format!("{:?}", self.scheduler.lr()));
        w.meta.insert("stage".into(), if self.stage2 { "2" } else { "1" }.into());
        for line in self.config.to_text().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                w.meta.insert(format!("{TRAIN_META_PREFIX}{k}"), v.to_string());
            }
        }
        w
    }

    pub fn into_outcome(mut self) -> Result<TrainOutcome> {
        let baseline_psnr_db = self.baseline_psnr()?;
        Ok(TrainOutcome { weights: self.weights(), history: self.history, baseline_psnr_db })
    }
}

/// Trains a fixed- or range-quality model to completion.
pub fn train(config: TrainConfig, model: ModelConfig, train: &[PlanarImage], validation: &[PlanarImage]) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config, model, train, validation)?;
    t.run()?;
    t.into_outcome()
}

/// Trains a flexible model over a quality range with multi-channel labels.
pub fn train_flexible(
    config: TrainConfig,
    model: ModelConfig,
    train_set: &[PlanarImage],
    validation: &[PlanarImage],
) -> Result<TrainOutcome> {
    if model.labeling != LabelMode::MultiChannel {
        return Err(Error::invalid("flexible training needs multi-channel label maps"));
    }
    if !matches!(config.quality, QualitySpec::Range(..)) {
        return Err(Error::invalid("flexible training needs a quality range"));
    }
    train(config, model, train_set, validation)
}

/// Restores `degraded` with a trained model at quality `q`.
pub fn restore_with(weights: &ModelWeights, net: &Idcn<f32>, degraded: &PlanarImage, q: u32) -> Result<PlanarImage> {
    let config = weights.config;
    let label = full_label_map(weights.prior.as_ref(), config.labeling, q, degraded.height(), degraded.width())?;
    net.restore(degraded, label.as_ref(), q)
}
