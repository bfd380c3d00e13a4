use rand::Rng;

use crate::nn::Tensor;
use crate::rng::uniform;

/// Default probability of replacing the condition by the null condition.
pub const DEFAULT_CONDITION_DROPOUT: f64 = 0.2;

/// Encoded observation, or the all-zero null condition.
///
/// The encoding is the observation followed by a presence flag of `1.0`, so
/// an observation that happens to be all zeros stays distinguishable from the
/// null condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionVector {
    pub values: Vec<f32>,
    pub is_null: bool,
}

impl ConditionVector {
    pub fn encode(x_l: &[f32]) -> Self {
        let mut values = Vec::with_capacity(x_l.len() + 1);
        values.extend_from_slice(x_l);
        values.push(1.0);
        ConditionVector { values, is_null: false }
    }

    pub fn null(observation_dim: usize) -> Self {
        ConditionVector {
            values: vec![0.0; observation_dim + 1],
            is_null: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Width of the encoded condition for an observation of `observation_dim` values.
pub fn condition_dim(observation_dim: usize) -> usize {
    observation_dim + 1
}

/// With probability `dropout_p` returns the null condition, else the encoded observation.
pub fn encode_condition(x_l: &[f32], dropout_p: f64, rng: &mut impl Rng) -> ConditionVector {
    assert!((0.0..=1.0).contains(&dropout_p), "dropout probability outside [0,1]");
    if uniform(rng) < dropout_p {
        ConditionVector::null(x_l.len())
    } else {
        ConditionVector::encode(x_l)
    }
}

/// Row-stacked conditions for a batch of observations (`rows` of width `obs_dim`).
pub fn encode_batch(observations: &[f32], obs_dim: usize, dropout_p: f64, rng: &mut impl Rng) -> Tensor<f32> {
    let n = observations.len() / obs_dim;
    let width = condition_dim(obs_dim);
    let mut data = Vec::with_capacity(n * width);
    for row in observations.chunks(obs_dim) {
        data.extend(encode_condition(row, dropout_p, rng).values);
    }
    Tensor::new(n, width, data)
}

pub fn null_batch(n: usize, obs_dim: usize) -> Tensor<f32> {
    Tensor::zeros(n, condition_dim(obs_dim))
}
