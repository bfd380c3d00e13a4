//! Stage-2 refinement: distribution-matching gradient against a trainable
//! regularizer, hinge adversarial losses, and reconstruction, on top of the
//! continued splitting loss.

mod losses;
mod models;
mod train;

use thiserror::Error;

pub use losses::{
    gan_discriminator_loss, gan_generator_loss, reconstruction_loss, regularizer_loss, schedule_registry, vsd_gradient,
    vsd_gradient_at, ConstantWeight, LossWeights, TableWeight, VsdConfig, WeightSchedule,
};
pub use models::{init_regularizer, BoundDisc, DiscArch, Discriminator, ENERGY_SCALE, POOL_GRID};
pub use train::{
    continue_refine, refine_student, stage2_train_step, student_gradients, Stage2Batch, Stage2Config, Stage2Models,
    Stage2Optimizers, Stage2Record,
};

use crate::flow::FlowError;
use crate::nn::NnError;
use crate::registry::UnknownName;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("loss weight {name} = {value} must be finite and nonnegative")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("weight schedule table needs finite times and nonnegative weights")]
    InvalidSchedule,
    #[error("distillation time range [{0}, {1}] is not inside [0, 1]")]
    InvalidTimeRange(f64, f64),
    #[error("non-finite {component} value at iteration {iteration}")]
    NonFinite { component: &'static str, iteration: u64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    UnknownName(#[from] UnknownName),
}

#[cfg(test)]
mod tests;
