use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OptimError {
    #[error("fan-in must be at least 1")]
    ZeroFanIn,
    #[error("layer {layer}: gradient shape {got:?} does not match weights {expected:?}")]
    ShapeMismatch {
        layer: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("expected {expected} gradient matrices, got {got}")]
    LayerCount { expected: usize, got: usize },
}

/// Dense-layer initialization: entries drawn uniformly from
/// [-sqrt(1/fan_in), sqrt(1/fan_in)), sampled row-major from a ChaCha8
/// stream so the result is identical on every platform for a given seed.
/// `rows` is the output width, `cols` the fan-in.
pub fn init_weights(rows: usize, cols: usize, seed: u64) -> Result<Array2<f64>, OptimError> {
    if cols == 0 {
        return Err(OptimError::ZeroFanIn);
    }
    let bound = (1.0 / cols as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Array2::from_shape_fn((rows, cols), |_| {
        rng.random_range(-bound..bound)
    }))
}

/// Adam with the standard bias-corrected update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of steps taken so far.
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub u: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)], lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon: 1e-8,
            t: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            u: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    /// One optimizer step over every weight matrix:
    /// m <- b1 m + (1-b1) g, u <- b2 u + (1-b2) g^2, both bias-corrected,
    /// then w <- w - lr * m_hat / (sqrt(u_hat) + eps).
    pub fn step(
        &mut self,
        weights: &mut [Array2<f64>],
        grads: &[Array2<f64>],
    ) -> Result<(), OptimError> {
        if weights.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(OptimError::LayerCount {
                expected: self.m.len(),
                got: if weights.len() != self.m.len() {
                    weights.len()
                } else {
                    grads.len()
                },
            });
        }
        for (layer, (w, g)) in weights.iter().zip(grads).enumerate() {
            if w.dim() != self.m[layer].dim() || g.dim() != self.m[layer].dim() {
                return Err(OptimError::ShapeMismatch {
                    layer,
                    expected: self.m[layer].dim(),
                    got: if w.dim() != self.m[layer].dim() { w.dim() } else { g.dim() },
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (layer, (w, g)) in weights.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[layer];
            let u = &mut self.u[layer];
            ndarray::Zip::from(w)
                .and(m)
                .and(u)
                .and(g)
                .for_each(|w, m, u, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *u = self.beta2 * *u + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let u_hat = *u / bc2;
                    *w -= self.lr * m_hat / (u_hat.sqrt() + self.epsilon);
                });
        }
        Ok(())
    }
}
