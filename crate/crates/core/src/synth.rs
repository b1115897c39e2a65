//! Procedural stand-ins for natural photographs.
//!
//! Images combine a smooth colour gradient, multi-octave value noise with a
//! roughly 1/f spectrum, anti-aliased occluding shapes (some carrying
//! oriented stripe texture) and fine sensor-like grain, then quantize to
//! 8-bit samples. Generation is a pure function of `(height, width, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{ColorSpace, PlanarImage, SampleRange};

/// Smoothly interpolated lattice noise in roughly `[-1, 1]`.
struct ValueNoise {
    cells_y: usize,
    cells_x: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, cells_y: usize, cells_x: usize) -> Self {
        let lattice = (0..(cells_y + 1) * (cells_x + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { cells_y, cells_x, lattice }
    }

    fn sample(&self, fy: f64, fx: f64) -> f64 {
        let gy = fy * self.cells_y as f64;
        let gx = fx * self.cells_x as f64;
        let y0 = (gy.floor() as usize).min(self.cells_y - 1);
        let x0 = (gx.floor() as usize).min(self.cells_x - 1);
        let ty = smooth(gy - y0 as f64);
        let tx = smooth(gx - x0 as f64);
        let stride = self.cells_x + 1;
        let at = |y: usize, x: usize| self.lattice[y * stride + x];
        let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
        let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn smooth(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

enum ShapeKind {
    Ellipse { ry: f64, rx: f64 },
    Rect { hy: f64, hx: f64 },
}

struct Shape {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
    opacity: f64,
    softness: f64,
    stripes: Option<(f64, f64, f64)>, // (frequency, phase, amplitude)
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64) -> Self {
        let size = h.min(w);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let kind = if rng.random_bool(0.5) {
            ShapeKind::Ellipse {
                ry: rng.random_range(0.05..0.35) * size,
                rx: rng.random_range(0.05..0.35) * size,
            }
        } else {
            ShapeKind::Rect {
                hy: rng.random_range(0.04..0.3) * size,
                hx: rng.random_range(0.04..0.3) * size,
            }
        };
        let stripes = rng.random_bool(0.35).then(|| {
            (rng.random_range(0.25..1.2), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(10.0..45.0))
        });
        Shape {
            kind,
            cy: rng.random_range(0.0..h),
            cx: rng.random_range(0.0..w),
            cos: angle.cos(),
            sin: angle.sin(),
            color: [rng.random_range(10.0..245.0), rng.random_range(10.0..245.0), rng.random_range(10.0..245.0)],
            opacity: rng.random_range(0.55..1.0),
            softness: rng.random_range(0.4..1.6),
            stripes,
        }
    }

    /// Coverage in `[0, 1]` and local stripe offset at pixel centre `(y, x)`.
    fn coverage(&self, y: f64, x: f64) -> (f64, f64) {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let v = -self.sin * dx + self.cos * dy;
        let u = self.cos * dx + self.sin * dy;
        // signed distance (approximate for ellipses), negative inside
        let dist = match self.kind {
            ShapeKind::Ellipse { ry, rx } => {
                let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                (r - 1.0) * rx.min(ry)
            }
            ShapeKind::Rect { hy, hx } => (u.abs() - hx).max(v.abs() - hy),
        };
        let cov = 1.0 / (1.0 + (dist / self.softness).exp());
        let stripe = self.stripes.map_or(0.0, |(f, p, a)| a * (f * u + p).sin());
        (cov, stripe)
    }
}

/// One synthetic RGB image in byte range.
pub fn natural_image(height: usize, width: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1dc0_0000_0000);
    let (hf, wf) = (height as f64, width as f64);
    let n = height * width;

    // Background gradient between two colours.
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(30.0..220.0));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(30.0..220.0));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gy, gx) = (theta.sin(), theta.cos());

    // Fractal noise: luminance octaves plus a weaker chroma field.
    let octaves: Vec<(ValueNoise, f64)> = (0..5)
        .map(|o| {
            let cells = 2usize << o;
            (ValueNoise::new(&mut rng, cells, cells), 42.0 * 0.55f64.powi(o))
        })
        .collect();
    let tint: [ValueNoise; 3] = std::array::from_fn(|_| ValueNoise::new(&mut rng, 3, 3));

    let shape_count = rng.random_range(6..16);
    let shapes: Vec<Shape> = (0..shape_count).map(|_| Shape::random(&mut rng, hf, wf)).collect();

    let grain = Normal::new(0.0, rng.random_range(1.0..3.0)).expect("positive sigma");

    let mut data = vec![0.0f64; 3 * n];
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = ((y as f64 + 0.5) / hf, (x as f64 + 0.5) / wf);
            let t = (0.5 + 0.5 * ((fy - 0.5) * gy + (fx - 0.5) * gx) * 1.4).clamp(0.0, 1.0);
            let lum: f64 = octaves.iter().map(|(nz, a)| a * nz.sample(fy, fx)).sum();
            let mut px: [f64; 3] =
                std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t + lum + 18.0 * tint[c].sample(fy, fx));
            for s in &shapes {
                let (cov, stripe) = s.coverage(y as f64 + 0.5, x as f64 + 0.5);
                if cov < 1e-4 {
                    continue;
                }
                let a = cov * s.opacity;
                for c in 0..3 {
                    let target = s.color[c] + stripe + 0.5 * lum;
                    px[c] = px[c] * (1.0 - a) + target * a;
                }
            }
            for (c, &v) in px.iter().enumerate() {
                data[c * n + y * width + x] = v;
            }
        }
    }
    for v in data.iter_mut() {
        *v = (*v + grain.sample(&mut rng)).clamp(0.0, 255.0).round();
    }
    PlanarImage::new(height, width, 3, ColorSpace::Rgb, SampleRange::Byte, data).expect("consistent synthetic image")
}

/// Seed of image `index` in the corpus generated from `seed`.
pub fn corpus_image_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// `count` images derived from one corpus seed.
pub fn natural_corpus(count: usize, height: usize, width: usize, seed: u64) -> Vec<PlanarImage> {
    (0..count).map(|i| natural_image(height, width, corpus_image_seed(seed, i))).collect()
}
