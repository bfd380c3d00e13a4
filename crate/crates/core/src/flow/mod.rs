//! Flow-matching primitives: the straight noise/data path, the teacher and its
//! objective, guidance, and ODE samplers.
//!
//! Time runs from `t = 1` (pure noise) to `t = 0` (data) everywhere.

mod analytic;
mod embed;
mod path;
mod sampler;
mod teacher;

use thiserror::Error;

pub use analytic::{
    analytic_registry, flow_identity_residual, flow_identity_scan, AnalyticField, AnalyticVelocity, ConstantField,
    ExponentialField, LinearTimeField, PointMassField, WrongQuadraticField,
};
pub use embed::{time_embedding, time_features};
pub use path::{
    instantaneous_velocity, instantaneous_velocity_batch, interpolate, interpolate_batch, interpolate_var, FlowSample,
};
pub use sampler::{
    integrator_registry, ode_sample, Euler, Integrator, Midpoint, SamplerConfig, Trajectory, VelocityField,
};
pub use teacher::{
    cfg_velocity, continue_teacher, fm_loss, init_teacher, train_teacher, BoundTeacher, TeacherField, TeacherModel,
    TeacherRecord, TeacherTrainConfig, VelocityArch,
};

use crate::nn::NnError;
use crate::registry::UnknownName;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("sampler needs at least one step")]
    InvalidSteps,
    #[error("non-finite state after integration step {step}")]
    NonFiniteState { step: usize },
    #[error("training diverged (non-finite loss) at iteration {iteration}")]
    Divergence { iteration: u64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    UnknownName(#[from] UnknownName),
}
