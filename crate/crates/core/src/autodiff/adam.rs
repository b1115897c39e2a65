use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// Adam with bias correction. Moments live in `f64` regardless of `T`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` and leaves gradients untouched.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the parameter set"));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            for ((w, &g), (mi, vi)) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut().zip(v.iter_mut())) {
                let g = g.as_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
                *w = T::lit(w.as_f64() - update);
            }
        }
        Ok(())
    }
}
