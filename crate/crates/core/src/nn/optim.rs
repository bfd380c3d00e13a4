use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Scalar;
use super::NnError;

/// Hyperparameters of the AdamW update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamWConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamWConfig {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Per step `k` (1-based), for each scalar θ with gradient g:
///
/// ```text
/// θ ← θ·(1 − lr·wd)
/// m ← β₁m + (1−β₁)g,   v ← β₂v + (1−β₂)g²
/// θ ← θ − lr · (m / (1−β₁ᵏ)) / (√(v / (1−β₂ᵏ)) + ε)
/// ```
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamSet<T>) -> Self {
        AdamW {
            config,
            step: 0,
            first: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated grads, then clears them.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<(), NnError> {
        assert_eq!(params.len(), self.first.len(), "optimizer/parameter mismatch");
        for p in params.iter() {
            if p.grad.has_non_finite() {
                return Err(NnError::NonFinite {
                    what: format!("gradient of {}", p.name),
                });
            }
        }
        self.step += 1;
        let c = &self.config;
        let f = T::from_f64_lossy;
        let (lr, b1, b2, eps) = (f(c.learning_rate), f(c.beta1), f(c.beta2), f(c.epsilon));
        let decay = f(1.0 - c.learning_rate * c.weight_decay);
        let bc1 = f(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = f(1.0 - c.beta2.powi(self.step as i32));
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let grads = p.grad.data().to_vec();
            for (j, (theta, g)) in p.value.data_mut().iter_mut().zip(grads).enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grad();
        Ok(())
    }
}
