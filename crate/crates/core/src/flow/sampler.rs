//! Explicit ODE integration from noise (`t = 1`) to data (`t = 0`).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::nn::{Scalar, Tensor};
use crate::registry::Registry;

/// A frozen, batched velocity field `v(z, t)`; every row shares `t`.
pub trait VelocityField<T> {
    fn velocity(&self, z: &Tensor<T>, t: f64) -> Tensor<T>;
}

impl<T, F> VelocityField<T> for F
where
    F: Fn(&Tensor<T>, f64) -> Tensor<T>,
{
    fn velocity(&self, z: &Tensor<T>, t: f64) -> Tensor<T> {
        self(z, t)
    }
}

/// One explicit step from `t` to `t − dt`.
pub trait Integrator<T>: Send + Sync {
    fn step(&self, field: &dyn VelocityField<T>, z: &Tensor<T>, t: f64, dt: f64) -> Tensor<T>;
}

fn axpy<T: Scalar>(z: &Tensor<T>, k: f64, v: &Tensor<T>) -> Tensor<T> {
    let k = T::from_f64_lossy(k);
    z.zip_map(v, |a, b| a + k * b)
}

pub struct Euler;

impl<T: Scalar> Integrator<T> for Euler {
    fn step(&self, field: &dyn VelocityField<T>, z: &Tensor<T>, t: f64, dt: f64) -> Tensor<T> {
        axpy(z, -dt, &field.velocity(z, t))
    }
}

pub struct Midpoint;

impl<T: Scalar> Integrator<T> for Midpoint {
    fn step(&self, field: &dyn VelocityField<T>, z: &Tensor<T>, t: f64, dt: f64) -> Tensor<T> {
        let half = axpy(z, -0.5 * dt, &field.velocity(z, t));
        axpy(z, -dt, &field.velocity(&half, t - 0.5 * dt))
    }
}

pub fn integrator_registry<T: Scalar>() -> Registry<dyn Integrator<T>> {
    let mut reg: Registry<dyn Integrator<T>> = Registry::new("integrator");
    reg.register("euler", Arc::new(Euler))
        .register("midpoint", Arc::new(Midpoint));
    reg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub num_steps: usize,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub guidance_scale: Option<f64>,
}

fn default_scheme() -> String {
    "euler".into()
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: 100,
            scheme: default_scheme(),
            guidance_scale: None,
        }
    }
}

/// Result of an integration: the final state and every visited state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub end: Tensor<T>,
    pub states: Vec<Tensor<T>>,
}

/// Integrates `field` from `t = 1` down to `t = 0` with uniform steps.
pub fn ode_sample<T: Scalar>(
    field: &dyn VelocityField<T>,
    z_start: &Tensor<T>,
    config: &SamplerConfig,
) -> Result<Trajectory<T>, FlowError> {
    if config.num_steps == 0 {
        return Err(FlowError::InvalidSteps);
    }
    let integrator = integrator_registry::<T>().get(&config.scheme)?;
    let n = config.num_steps;
    let dt = 1.0 / n as f64;
    let mut states = Vec::with_capacity(n + 1);
    states.push(z_start.clone());
    let mut z = z_start.clone();
    for step in 0..n {
        let t = 1.0 - step as f64 * dt;
        z = integrator.step(field, &z, t, dt);
        if z.has_non_finite() {
            return Err(FlowError::NonFiniteState { step });
        }
        states.push(z.clone());
    }
    Ok(Trajectory { end: z, states })
}
