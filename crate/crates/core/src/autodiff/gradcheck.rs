//! Central-difference gradient checking for `f64` graphs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Elements checked per tensor; `None` checks all of them.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_per_tensor: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// Relative error with a floor of `1e-3·scale`, where `scale` is the largest
/// analytic magnitude in the tensor, so entries that are zero up to rounding
/// do not dominate.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3 * scale).max(f64::MIN_POSITIVE);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of a scalar with central differences, for every
/// trainable parameter and for the input tensor.
///
/// `build` receives the tape, the parameters and the input leaf and must
/// return a scalar node.
pub fn gradcheck<F>(
    params: &mut ParamStore<f64>,
    input: &Tensor<f64>,
    mut build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>, Var) -> Result<Var>,
{
    let eval = |build: &mut F, params: &ParamStore<f64>, input: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let loss = build(&mut tape, params, x)?;
        Ok(tape.value(loss).data()[0])
    };

    params.zero_grad();
    let input_grad = {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let loss = build(&mut tape, params, x)?;
        if tape.value(loss).data().len() != 1 {
            return Err(Error::shape("gradcheck needs a scalar loss"));
        }
        tape.backward(loss, params)?;
        tape.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pick = |len: usize| -> Vec<usize> {
        match opts.max_per_tensor {
            Some(k) if k < len => {
                let mut idx = sample(&mut rng, len, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        }
    };

    let mut tensors = Vec::new();
    let ids: Vec<_> = params.ids().filter(|&id| params.get(id).trainable).collect();
    for id in ids {
        let analytic = params.get(id).grad.clone();
        let name = params.get(id).name.clone();
        let indices = pick(analytic.len());
        let mut numeric = Vec::with_capacity(indices.len());
        for &i in &indices {
            let orig = params.get(id).value[i];
            params.get_mut(id).value[i] = orig + opts.step;
            let plus = eval(&mut build, params, input)?;
            params.get_mut(id).value[i] = orig - opts.step;
            let minus = eval(&mut build, params, input)?;
            params.get_mut(id).value[i] = orig;
            numeric.push((plus - minus) / (2.0 * opts.step));
        }
        tensors.push(summarize(name, &analytic, &indices, &numeric));
    }

    let indices = pick(input.data().len());
    let mut numeric = Vec::with_capacity(indices.len());
    let mut probe = input.clone();
    for &i in &indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.step;
        let plus = eval(&mut build, params, &probe)?;
        probe.data_mut()[i] = orig - opts.step;
        let minus = eval(&mut build, params, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * opts.step));
    }
    tensors.push(summarize("input".into(), input_grad.data(), &indices, &numeric));
    Ok(GradCheckReport { tensors })
}

fn summarize(name: String, analytic: &[f64], indices: &[usize], numeric: &[f64]) -> TensorCheck {
    let scale = analytic.iter().map(|a| a.abs()).fold(0.0, f64::max);
    let mut out = TensorCheck { name, checked: indices.len(), max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for (&i, &n) in indices.iter().zip(numeric) {
        let e = relative_error(analytic[i], n, scale);
        if e > out.max_rel_error || out.checked == 0 {
            out.max_rel_error = e;
            out.worst_index = i;
            out.analytic = analytic[i];
            out.numeric = n;
        }
    }
    out
}

/// Named check results, one per op under test.
pub type SuiteReport = Vec<(String, GradCheckReport)>;

fn random_tensor(rng: &mut ChaCha8Rng, shape: super::Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Relu inputs drawn away from the kink, `|x| ∈ [0.1, 1)`.
fn off_kink_tensor(rng: &mut ChaCha8Rng, shape: super::Shape) -> Tensor<f64> {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Checks every graph op, each followed by an MSE loss against a random
/// target, on small random tensors.
pub fn op_suite(seed: u64) -> Result<SuiteReport> {
    use super::{ConvParams, Graph, Shape};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
    let shape = Shape::new(2, 3, 7, 6);
    let mut out = Vec::new();

    for (kernel, dilation, cout) in [(3, 1, 4), (3, 2, 2), (5, 1, 2), (1, 1, 5)] {
        let mut params = ParamStore::new();
        let conv = ConvParams::init(&mut params, &mut rng, "conv", 3, cout, kernel, dilation)?;
        for p in params.iter_mut() {
            if p.shape.len() == 1 {
                p.value.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
        }
        let x = random_tensor(&mut rng, shape, -1.0, 1.0);
        let target = random_tensor(&mut rng, shape.with_channels(cout), -1.0, 1.0);
        let report = gradcheck(
            &mut params,
            &x,
            |t, p, x| {
                let y = t.conv2d(p, &x, &conv)?;
                let target = t.leaf(target.clone());
                t.mse_loss(&y, &target)
            },
            &opts,
        )?;
        out.push((format!("conv{kernel}x{kernel}_d{dilation}"), report));
    }

    let target = random_tensor(&mut rng, shape, -1.0, 1.0);
    let mut unary = |name: &str, x: Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, Var) -> Var| -> Result<()> {
        let report = gradcheck(
            &mut ParamStore::new(),
            &x,
            |t, _, x| {
                let y = f(t, x);
                let target = t.leaf(target.clone());
                t.mse_loss(&y, &target)
            },
            &opts,
        )?;
        out.push((name.to_string(), report));
        Ok(())
    };
    unary("relu", off_kink_tensor(&mut rng, shape), &|t, x| t.relu(&x))?;
    unary("qru", random_tensor(&mut rng, shape, -3.0, 3.0), &|t, x| t.qru(&x))?;
    unary("scale", random_tensor(&mut rng, shape, -1.0, 1.0), &|t, x| t.scale(&x, -1.7))?;
    unary("mse", random_tensor(&mut rng, shape, -1.0, 1.0), &|_, x| x)?;

    // Binary ops pair the input with a convolution of itself so both operands carry gradient.
    for name in ["concat", "add"] {
        let mut params = ParamStore::new();
        let conv = ConvParams::init(&mut params, &mut rng, "side", 3, 3, 3, 1)?;
        let x = random_tensor(&mut rng, shape, -1.0, 1.0);
        let cout = if name == "concat" { 6 } else { 3 };
        let target = random_tensor(&mut rng, shape.with_channels(cout), -1.0, 1.0);
        let report = gradcheck(
            &mut params,
            &x,
            |t, p, x| {
                let side = t.conv2d(p, &x, &conv)?;
                let y = if name == "concat" { t.concat(&[&x, &side])? } else { t.add(&x, &side)? };
                let target = t.leaf(target.clone());
                t.mse_loss(&y, &target)
            },
            &opts,
        )?;
        out.push((name.to_string(), report));
    }

    // Per-sample fixed 64×64 maps.
    let shape64 = Shape::new(2, 64, 3, 2);
    let kernels: Vec<super::FixedKernel<f64>> =
        (0..2).map(|_| random_tensor(&mut rng, Shape::new(1, 1, 64, 64), -1.0, 1.0).into_vec().into()).collect();
    let x = random_tensor(&mut rng, shape64, -0.5, 0.5);
    let target = random_tensor(&mut rng, shape64, -1.0, 1.0);
    let report = gradcheck(
        &mut ParamStore::new(),
        &x,
        |t, _, x| {
            let y = t.fixed_linear_1x1(&x, &kernels)?;
            let target = t.leaf(target.clone());
            t.mse_loss(&y, &target)
        },
        &opts,
    )?;
    out.push(("fixed_linear_1x1".to_string(), report));
    Ok(out)
}
