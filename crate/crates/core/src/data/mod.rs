//! Toy conditional tasks: paired clean samples and degraded observations.

mod condition;
mod degrade;
mod io;
mod toy;

use std::sync::Arc;

use thiserror::Error;

pub use condition::{
    condition_dim, encode_batch, encode_condition, null_batch, ConditionVector, DEFAULT_CONDITION_DROPOUT,
};
pub use degrade::{degrade, DegradationParams};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use toy::{GaussianMixture, TinyPatches, TwoMoons, PATCH_SIDE};

use crate::nn::Tensor;
use crate::registry::{Registry, UnknownName};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset size must be at least 1")]
    Empty,
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error(transparent)]
    UnknownName(#[from] UnknownName),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Paired clean samples (`hr`) and observations (`lr`), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub name: String,
    pub hr_shape: Vec<usize>,
    pub lr_shape: Vec<usize>,
    pub hr: Vec<f32>,
    pub lr: Vec<f32>,
    pub seed: Option<u64>,
}

impl ToyDataset {
    pub fn hr_dim(&self) -> usize {
        self.hr_shape.iter().product()
    }

    pub fn lr_dim(&self) -> usize {
        self.lr_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.hr.len() / self.hr_dim().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hr_row(&self, i: usize) -> &[f32] {
        let d = self.hr_dim();
        &self.hr[i * d..(i + 1) * d]
    }

    pub fn lr_row(&self, i: usize) -> &[f32] {
        let d = self.lr_dim();
        &self.lr[i * d..(i + 1) * d]
    }

    pub fn hr_tensor(&self) -> Tensor<f32> {
        Tensor::new(self.len(), self.hr_dim(), self.hr.clone())
    }

    pub fn lr_tensor(&self) -> Tensor<f32> {
        Tensor::new(self.len(), self.lr_dim(), self.lr.clone())
    }

    /// Gathers `idx` into `(hr, lr)` batch tensors.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let (dh, dl) = (self.hr_dim(), self.lr_dim());
        let mut hr = Vec::with_capacity(idx.len() * dh);
        let mut lr = Vec::with_capacity(idx.len() * dl);
        for &i in idx {
            hr.extend_from_slice(self.hr_row(i));
            lr.extend_from_slice(self.lr_row(i));
        }
        (Tensor::new(idx.len(), dh, hr), Tensor::new(idx.len(), dl, lr))
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ToyDataset {
        let (dh, dl) = (self.hr_dim(), self.lr_dim());
        ToyDataset {
            name: self.name.clone(),
            hr_shape: self.hr_shape.clone(),
            lr_shape: self.lr_shape.clone(),
            hr: self.hr[range.start * dh..range.end * dh].to_vec(),
            lr: self.lr[range.start * dl..range.end * dl].to_vec(),
            seed: self.seed,
        }
    }

    /// Side of a square patch, when the samples are images.
    pub fn patch_side(&self) -> Option<usize> {
        match self.hr_shape.as_slice() {
            [h, w] if h == w => Some(*h),
            _ => None,
        }
    }
}

/// A named family of conditional toy distributions.
pub trait DatasetGenerator: Send + Sync {
    fn name(&self) -> &str;
    /// `(hr_shape, lr_shape)`.
    fn shapes(&self) -> (Vec<usize>, Vec<usize>);
    fn generate(&self, n: usize, seed: u64) -> Result<ToyDataset, DataError>;
}

pub fn dataset_registry(degradation: DegradationParams) -> Registry<dyn DatasetGenerator> {
    let mut reg: Registry<dyn DatasetGenerator> = Registry::new("dataset");
    reg.register("two-moons-conditional", Arc::new(TwoMoons::default()))
        .register("gaussian-mixture-conditional", Arc::new(GaussianMixture::default()))
        .register("tiny-patches", Arc::new(TinyPatches::new(degradation)));
    reg
}

pub fn generate_dataset(
    name: &str,
    n: usize,
    seed: u64,
    degradation: DegradationParams,
) -> Result<ToyDataset, DataError> {
    dataset_registry(degradation).get(name)?.generate(n, seed)
}
