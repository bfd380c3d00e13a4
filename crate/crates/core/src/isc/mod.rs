//! Stage-1 distillation into a two-time average-velocity student.
//!
//! The student learns `u(z, r, t)` from two signals: splitting consistency,
//! `(t−r)u(z_t,r,t) = (s−r)u(z_s,r,s) + (t−s)u(z_t,s,t)`, and boundary
//! matching `u(z_t,t,t) = v(z_t,t)` against the frozen teacher.

mod losses;
mod sampling;
mod student;
mod train;

use thiserror::Error;

pub use losses::{
    backward_integrate, boundary_loss, isc_loss, isc_loss_with_target, isc_target, sample_interval, Interval,
    IntervalSampler,
};
pub use sampling::{isc_residual, isc_residual_scan, multi_step_sample, one_step_sample, MeanVelocity, StudentField};
pub use student::{BoundStudent, StudentModel};
pub use train::{
    branch_rule_registry, continue_student, simulate_branches, split_fraction, stage1_train_step, train_student,
    AlgorithmRule, Branch, BranchRule, ProseRule, Stage1Config, Stage1Record,
};

use crate::nn::NnError;
use crate::registry::UnknownName;

#[derive(Debug, Error)]
pub enum IscError {
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("non-finite {branch} loss at iteration {iteration}")]
    Divergence { iteration: u64, branch: Branch },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    UnknownName(#[from] UnknownName),
}

#[cfg(test)]
mod tests;
