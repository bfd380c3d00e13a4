//! Sample-quality metrics and the seed diversity and stability protocols.

mod fidelity;
mod protocol;
mod sw;

use thiserror::Error;

pub use fidelity::{
    distance_registry, gradient_histogram, gradient_histograms, mean_psnr, psnr, Euclidean, FeatureDistance,
    FeatureNet, SampleDistance, FEATURE_NET_LAYERS, FEATURE_NET_SEED, GRADIENT_BINS, GRADIENT_RANGE,
};
pub use protocol::{
    dataset_conditions, default_seeds, generate_for, generator_seed_diversity, metric_stability, seed_diversity,
    seed_noise, stability, task_metrics, DiversityReport, Generator, MetricReport, MetricSeries, StudentSampler,
    TeacherSampler,
};
pub use sw::{
    random_directions, sliced_wasserstein, sliced_wasserstein_default, sliced_wasserstein_with, wasserstein2_sq_sorted,
    DEFAULT_PROJECTIONS, DEFAULT_PROJECTION_SEED,
};

use crate::flow::FlowError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty point set")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("need at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}
