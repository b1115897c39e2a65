use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ReuKind, REU_CHANNELS};
use crate::autodiff::{ConvParams, Eager, FixedKernel, Graph, ParamStore, Real, Shape, Tensor};
use crate::codec::TablePair;
use crate::error::{Error, Result};
use crate::image::{ColorSpace, PlanarImage, SampleRange};
use crate::labeling::LabelMap;
use crate::translation::TranslationKernel;

/// Unit-range translation kernels for one quality.
#[derive(Debug, Clone)]
pub struct TableKernels<T> {
    pub quality: u32,
    pub luma: FixedKernel<T>,
    pub chroma: FixedKernel<T>,
}

impl<T: Real> TableKernels<T> {
    pub fn for_quality(quality: u32) -> Result<Self> {
        let tables = TablePair::for_quality(quality)?;
        let build = |t| -> FixedKernel<T> {
            TranslationKernel::build(t, SampleRange::Unit).weights().iter().map(|&w| T::lit(w)).collect::<Vec<_>>().into()
        };
        Ok(Self { quality, luma: build(&tables.luma), chroma: build(&tables.chroma) })
    }

    fn kernel(&self, kind: ReuKind) -> FixedKernel<T> {
        if kind.uses_luma_table() {
            self.luma.clone()
        } else {
            self.chroma.clone()
        }
    }
}

/// Builds each quality's kernels once.
#[derive(Debug, Default)]
pub struct KernelCache<T> {
    cache: HashMap<u32, Arc<TableKernels<T>>>,
}

impl<T: Real> KernelCache<T> {
    pub fn new() -> Self {
        Self { cache: HashMap::new() }
    }

    pub fn get(&mut self, quality: u32) -> Result<Arc<TableKernels<T>>> {
        if let Some(k) = self.cache.get(&quality) {
            return Ok(k.clone());
        }
        let k = Arc::new(TableKernels::for_quality(quality)?);
        self.cache.insert(quality, k.clone());
        Ok(k)
    }

    /// Kernels for a batch with per-sample qualities.
    pub fn batch(&mut self, qualities: &[u32]) -> Result<Vec<Arc<TableKernels<T>>>> {
        qualities.iter().map(|&q| self.get(q)).collect()
    }
}

#[derive(Debug, Clone)]
struct Dcu {
    dense: Vec<ConvParams>,
    transition: ConvParams,
    reus: Vec<(ReuKind, ConvParams)>,
    fusion: Option<ConvParams>,
    pixel: ConvParams,
}

/// Observer for relative-loss fields: `(dcu index, estimator, field)`.
pub type ReuProbe<'a, T> = &'a mut dyn FnMut(usize, ReuKind, &Tensor<T>);

/// The restoration network with its parameters.
#[derive(Debug, Clone)]
pub struct Idcn<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    fe1: ConvParams,
    fe2: ConvParams,
    dcus: Vec<Dcu>,
    fd1: ConvParams,
    fd2: ConvParams,
}

impl<T: Real> Idcn<T> {
    /// A freshly initialized network; identical seeds give identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let mut conv = |p: &mut ParamStore<T>, name: &str, cin, cout, k, d| ConvParams::init(p, &mut rng, name, cin, cout, k, d);
        let fe1 = conv(&mut p, "fe1", c.input_channels(), c.b, 5, 1)?;
        let fe2 = conv(&mut p, "fe2", c.b, c.b, 3, 1)?;
        let dilations = c.dense_dilations();
        let mut dcus = Vec::with_capacity(c.n);
        for n in 0..c.n {
            let mut dense = Vec::with_capacity(c.l - 1);
            for (j, &d) in dilations.iter().enumerate() {
                let name = format!("dcu{n}.dense{j}");
                dense.push(conv(&mut p, &name, c.dense_in_channels(j), c.dense_out_channels(j), 3, d)?);
            }
            let transition = conv(&mut p, &format!("dcu{n}.transition"), c.transition_in_channels(), c.b, 1, 1)?;
            let mut reus = Vec::new();
            for kind in c.reu_kinds() {
                let dilation = if kind == ReuKind::Luma { 1 } else { 2 };
                let name = format!("dcu{n}.{}", kind.name());
                reus.push((kind, conv(&mut p, &name, c.b, REU_CHANNELS, 3, dilation)?));
            }
            let fusion = if reus.is_empty() {
                None
            } else {
                Some(conv(&mut p, &format!("dcu{n}.fusion"), REU_CHANNELS * reus.len(), c.b, 3, 1)?)
            };
            let pixel = conv(&mut p, &format!("dcu{n}.pixel"), c.b, c.b, 3, 1)?;
            dcus.push(Dcu { dense, transition, reus, fusion, pixel });
        }
        let fd1 = conv(&mut p, "fd1", c.b, c.b, 3, 1)?;
        let fd2 = conv(&mut p, "fd2", c.b, c.image_channels(), 5, 1)?;
        Ok(Self { config, params: p, fe1, fe2, dcus, fd1, fd2 })
    }

    /// A network for `config` with every parameter taken from `params` by name.
    pub fn from_params(config: ModelConfig, params: &ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors given, configuration needs {}",
                params.len(),
                net.params.len()
            )));
        }
        for id in net.params.ids().collect::<Vec<_>>() {
            let slot = net.params.get_mut(id);
            let src = params
                .find(&slot.name)
                .map(|i| params.get(i))
                .ok_or_else(|| Error::shape(format!("missing parameter `{}`", slot.name)))?;
            if src.shape != slot.shape {
                return Err(Error::shape(format!("`{}` has shape {:?}, expected {:?}", slot.name, src.shape, slot.shape)));
            }
            slot.value.clone_from(&src.value);
        }
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Number of trainable convolution layers.
    pub fn conv_layer_count(&self) -> usize {
        4 + self.dcus.iter().map(|d| d.dense.len() + 1 + d.reus.len() + usize::from(d.fusion.is_some()) + 1).sum::<usize>()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Zeroes the fusion and pixel-branch convolutions of every DCU, making
    /// each DCU the identity on its input.
    pub fn zero_correctors(&mut self) {
        for d in &self.dcus {
            for c in d.fusion.iter().chain(std::iter::once(&d.pixel)) {
                for id in [c.weight, c.bias] {
                    self.params.get_mut(id).value.iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }

    /// Zeroes every relative-loss estimator's weights and biases.
    pub fn zero_estimators(&mut self) {
        for d in &self.dcus {
            for (_, c) in &d.reus {
                for id in [c.weight, c.bias] {
                    self.params.get_mut(id).value.iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }

    /// Runs the network on `input` (image planes followed by label planes).
    ///
    /// `tables[n]` supplies the translation kernels of batch item `n`.
    pub fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        input: &G::Value,
        tables: &[Arc<TableKernels<T>>],
        probe: Option<ReuProbe<'_, T>>,
    ) -> Result<G::Value> {
        self.forward_with(&self.params, g, input, tables, probe)
    }

    /// [`Idcn::forward`] with parameter values taken from `params`, which must
    /// be this network's store or a copy of it with edited values.
    pub fn forward_with<G: Graph<T>>(
        &self,
        p: &ParamStore<T>,
        g: &mut G,
        input: &G::Value,
        tables: &[Arc<TableKernels<T>>],
        mut probe: Option<ReuProbe<'_, T>>,
    ) -> Result<G::Value> {
        if p.len() != self.params.len() {
            return Err(Error::shape("parameter store does not belong to this network"));
        }
        let shape = g.shape(input);
        if shape.c != self.config.input_channels() {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.config.input_channels(),
                shape.c
            )));
        }
        if self.config.has_dct_branch() && tables.len() != shape.n {
            return Err(Error::invalid(format!("{} table sets for a batch of {}", tables.len(), shape.n)));
        }
        let f0 = g.conv2d(p, input, &self.fe1)?;
        let f0 = g.relu(&f0);
        let f1 = g.conv2d(p, &f0, &self.fe2)?;
        let mut f = g.relu(&f1);
        for (i, dcu) in self.dcus.iter().enumerate() {
            f = self.dcu_forward(p, g, dcu, i, &f, tables, probe.as_deref_mut())?;
        }
        let fd = g.conv2d(p, &f, &self.fd1)?;
        let fd = g.relu(&fd);
        g.conv2d(p, &fd, &self.fd2)
    }

    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn dcu_forward<'p, G: Graph<T>>(
        &self,
        p: &ParamStore<T>,
        g: &mut G,
        dcu: &Dcu,
        index: usize,
        prev: &G::Value,
        tables: &[Arc<TableKernels<T>>],
        probe: Option<&mut (dyn FnMut(usize, ReuKind, &Tensor<T>) + 'p)>,
    ) -> Result<G::Value> {
        let mut outs: Vec<G::Value> = Vec::with_capacity(dcu.dense.len());
        for (j, conv) in dcu.dense.iter().enumerate() {
            let y = match j {
                0 => g.conv2d(p, prev, conv)?,
                1 => g.conv2d(p, &outs[0], conv)?,
                _ => {
                    let cat = g.concat(&outs.iter().collect::<Vec<_>>())?;
                    g.conv2d(p, &cat, conv)?
                }
            };
            outs.push(g.relu(&y));
        }
        let cat = g.concat(&outs.iter().collect::<Vec<_>>())?;
        drop(outs);
        let fg = g.conv2d(p, &cat, &dcu.transition)?;
        let fg = g.relu(&fg);

        let scale = T::lit(self.config.residual_scale);
        let pixel = g.conv2d(p, &fg, &dcu.pixel)?;
        let mut out = g.scale(&pixel, scale);

        if let Some(fusion) = &dcu.fusion {
            let mut probe = probe;
            let mut deltas = Vec::with_capacity(dcu.reus.len());
            for &(kind, ref conv) in &dcu.reus {
                let z = g.conv2d(p, &fg, conv)?;
                let z = if kind == ReuKind::Chroma { z } else { g.qru(&z) };
                if let Some(f) = probe.as_deref_mut() {
                    f(index, kind, g.tensor(&z));
                }
                let kernels: Vec<FixedKernel<T>> = tables.iter().map(|t| t.kernel(kind)).collect();
                deltas.push(g.fixed_linear_1x1(&z, &kernels)?);
            }
            let joined = if deltas.len() == 1 { deltas.pop().expect("one delta") } else { g.concat(&deltas.iter().collect::<Vec<_>>())? };
            let fused = g.conv2d(p, &joined, fusion)?;
            let dct = g.scale(&fused, scale);
            out = g.add(&out, &dct)?;
        }
        g.add(prev, &out)
    }

    /// Restores one byte-range image. `label` must match the configured
    /// labeling mode; `quality` selects the translation kernels.
    pub fn restore(&self, degraded: &PlanarImage, label: Option<&LabelMap>, quality: u32) -> Result<PlanarImage> {
        let input = network_input::<T>(&self.config, degraded, label)?;
        let tables = vec![Arc::new(TableKernels::for_quality(quality)?)];
        let out = self.forward(&mut Eager, &input, &tables, None)?;
        output_image(&out, 0, self.config.image_channels())
    }
}

/// Unit-range planes of `image` followed by label planes divided by 255, as a batch of one.
pub fn network_input<T: Real>(config: &ModelConfig, image: &PlanarImage, label: Option<&LabelMap>) -> Result<Tensor<T>> {
    let (h, w) = (image.height(), image.width());
    let expected_space = match config.image_channels() {
        3 => ColorSpace::Rgb,
        _ => ColorSpace::Gray,
    };
    if image.space() != expected_space || image.range() != SampleRange::Byte {
        return Err(Error::invalid(format!("network expects a byte-range {expected_space:?} image")));
    }
    let label_channels = config.label_channels();
    let mut data: Vec<T> = image.data().iter().map(|&v| T::lit(v / 255.0)).collect();
    match label {
        None if label_channels == 0 => {}
        Some(map) if map.channels == label_channels && (map.height, map.width) == (h, w) => {
            data.extend(map.data.iter().map(|&v| T::lit(v / 255.0)));
        }
        _ => {
            return Err(Error::shape(format!("label map does not provide {label_channels} channels of {h}x{w}")));
        }
    }
    Tensor::from_vec(Shape::new(1, config.input_channels(), h, w), data)
}

/// Converts item `n` of a network output to a clamped, rounded byte image.
pub fn output_image<T: Real>(out: &Tensor<T>, n: usize, channels: usize) -> Result<PlanarImage> {
    let s = out.shape();
    if s.c != channels {
        return Err(Error::shape(format!("output has {} channels, expected {channels}", s.c)));
    }
    let mut data = Vec::with_capacity(channels * s.h * s.w);
    for c in 0..channels {
        data.extend(out.item_plane(n, c).iter().map(|v| (v.as_f64() * 255.0).clamp(0.0, 255.0).round()));
    }
    let space = if channels == 3 { ColorSpace::Rgb } else { ColorSpace::Gray };
    PlanarImage::new(s.h, s.w, channels, space, SampleRange::Byte, data)
}

/// Checks the gradient of an MSE loss through a whole `f64` network built
/// from `config` and `seed`, on a random `height`×`width` input at quality
/// `quality`. At most `max_per_tensor` entries of each tensor are probed.
pub fn network_gradcheck(
    config: ModelConfig,
    height: usize,
    width: usize,
    quality: u32,
    seed: u64,
    max_per_tensor: Option<usize>,
) -> Result<crate::autodiff::GradCheckReport> {
    use crate::autodiff::{gradcheck, GradCheckOptions};
    use rand::Rng;

    let net = Idcn::<f64>::new(config, seed)?;
    let mut params = net.params().clone();
    // Non-zero biases keep relu inputs away from exact zeros.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in params.iter_mut() {
        if p.shape.len() == 1 {
            p.value.iter_mut().for_each(|b| *b = rng.random_range(-0.05..0.05));
        }
    }
    let shape = Shape::new(1, config.input_channels(), height, width);
    let input = Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let target_shape = shape.with_channels(config.image_channels());
    let target = Tensor::from_vec(target_shape, (0..target_shape.numel()).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let tables = vec![Arc::new(TableKernels::<f64>::for_quality(quality)?)];
    let opts = GradCheckOptions { max_per_tensor, seed, ..GradCheckOptions::default() };
    gradcheck(
        &mut params,
        &input,
        |t, p, x| {
            let y = net.forward_with(p, t, &x, &tables, None)?;
            let target = t.leaf(target.clone());
            t.mse_loss(&y, &target)
        },
        &opts,
    )
}
