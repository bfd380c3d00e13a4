use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::models::BoundDisc;
use super::RefineError;
use crate::flow::{fm_loss, BoundTeacher, TeacherModel};
use crate::metrics::FeatureNet;
use crate::nn::{NnError, Scalar, Tensor, Var};
use crate::registry::Registry;
use crate::rng::{normal_vec, uniform};

/// Balancing weights of the student objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub isc: f64,
    pub reconstruction: f64,
    pub vsd: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            isc: 1.0,
            reconstruction: 1.0,
            vsd: 1.0,
            adversarial: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), RefineError> {
        for (name, w) in [
            ("isc", self.isc),
            ("reconstruction", self.reconstruction),
            ("vsd", self.vsd),
            ("adversarial", self.adversarial),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(RefineError::InvalidWeight { name, value: w });
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        LossWeights {
            isc: k * self.isc,
            reconstruction: k * self.reconstruction,
            vsd: k * self.vsd,
            adversarial: k * self.adversarial,
        }
    }
}

/// Time weighting `ω(t) ≥ 0` of the distillation gradient.
pub trait WeightSchedule: Send + Sync {
    fn weight(&self, t: f64) -> f64;
}

pub struct ConstantWeight(pub f64);

impl WeightSchedule for ConstantWeight {
    fn weight(&self, _t: f64) -> f64 {
        self.0
    }
}

/// Piecewise-linear table of `(t, ω)` knots, held constant beyond the ends.
pub struct TableWeight {
    knots: Vec<(f64, f64)>,
}

impl TableWeight {
    pub fn new(mut knots: Vec<(f64, f64)>) -> Result<Self, RefineError> {
        if knots.is_empty() || knots.iter().any(|k| k.1.is_nan() || k.1 < 0.0 || !k.0.is_finite()) {
            return Err(RefineError::InvalidSchedule);
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(TableWeight { knots })
    }
}

impl WeightSchedule for TableWeight {
    fn weight(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            if t <= w[1].0 {
                let f = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + f * (w[1].1 - w[0].1);
            }
        }
        k[k.len() - 1].1
    }
}

/// `constant-1`, and `table` built from the configured knots when any are given.
pub fn schedule_registry(table: &[(f64, f64)]) -> Result<Registry<dyn WeightSchedule>, RefineError> {
    let mut reg: Registry<dyn WeightSchedule> = Registry::new("weight schedule");
    reg.register("constant-1", Arc::new(ConstantWeight(1.0)));
    if !table.is_empty() {
        reg.register("table", Arc::new(TableWeight::new(table.to_vec())?));
    }
    Ok(reg)
}

/// Settings of the distillation gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsdConfig {
    pub t_min: f64,
    pub t_max: f64,
    /// CFG scale of the teacher branch; `None` disables guidance.
    #[serde(default)]
    pub guidance_scale: Option<f64>,
}

impl Default for VsdConfig {
    fn default() -> Self {
        VsdConfig {
            t_min: 0.02,
            t_max: 0.98,
            guidance_scale: None,
        }
    }
}

/// Gradient of the distillation term with respect to the student samples.
///
/// Each row gets its own `t ~ U(t_min, t_max)` and noise; with
/// `ẑ_t = (1−t)ẑ + tε`, row `i` receives `ω(t_i)(1−t_i)(v_φ − v_φ′)(ẑ_t) / B`,
/// the per-sample chain rule through `ẑ_t` for a batch-mean objective.
pub fn vsd_gradient(
    z_hat: &Tensor<f32>,
    teacher: &TeacherModel<f32>,
    regularizer: &TeacherModel<f32>,
    cond: &Tensor<f32>,
    schedule: &dyn WeightSchedule,
    config: &VsdConfig,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>, NnError> {
    let (b, d) = z_hat.shape();
    let t: Vec<f64> = (0..b)
        .map(|_| config.t_min + (config.t_max - config.t_min) * uniform(rng))
        .collect();
    let eps = Tensor::new(b, d, normal_vec(rng, b * d));
    vsd_gradient_at(
        z_hat,
        &eps,
        &t,
        teacher,
        regularizer,
        cond,
        schedule,
        config.guidance_scale,
    )
}

/// [`vsd_gradient`] at given times and noise.
#[allow(clippy::too_many_arguments)]
pub fn vsd_gradient_at<T: Scalar>(
    z_hat: &Tensor<T>,
    eps: &Tensor<T>,
    t: &[f64],
    teacher: &TeacherModel<T>,
    regularizer: &TeacherModel<T>,
    cond: &Tensor<T>,
    schedule: &dyn WeightSchedule,
    guidance: Option<f64>,
) -> Result<Tensor<T>, NnError> {
    let b = z_hat.rows();
    let z_t = crate::flow::interpolate_batch(z_hat, eps, t).expect("times in [0, 1]");
    let v_teacher = teacher.velocity_eval(&z_t, t, cond, guidance)?;
    let v_reg = regularizer.velocity_eval(&z_t, t, cond, None)?;
    let mut g = v_teacher.zip_map(&v_reg, |a, b| a - b);
    let cols = g.cols();
    for (i, row) in g.data_mut().chunks_mut(cols).enumerate() {
        let k = T::from_f64_lossy(schedule.weight(t[i]) * (1.0 - t[i]) / b as f64);
        row.iter_mut().for_each(|x| *x = *x * k);
    }
    Ok(g)
}

/// Flow-matching loss of the regularizer on detached student samples.
pub fn regularizer_loss<'t>(
    regularizer: &BoundTeacher<'_, 't, f32>,
    z_hat: &Tensor<f32>,
    cond: Var<'t, f32>,
    rng: &mut impl Rng,
) -> Result<Var<'t, f32>, crate::flow::FlowError> {
    let (b, d) = z_hat.shape();
    let eps = Tensor::new(b, d, normal_vec(rng, b * d));
    let t: Vec<f64> = (0..b).map(|_| uniform(rng)).collect();
    fm_loss(regularizer, z_hat, &eps, &t, cond)
}

/// `−mean D(x̂)`.
pub fn gan_generator_loss<'t, T: Scalar>(disc: &BoundDisc<'_, 't, T>, fake: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
    Ok(-disc.score(fake)?.mean())
}

/// `mean max(0, 1 − D(x)) + mean max(0, 1 + D(x̂))`.
pub fn gan_discriminator_loss<'t, T: Scalar>(
    disc: &BoundDisc<'_, 't, T>,
    real: Var<'t, T>,
    fake: Var<'t, T>,
) -> Result<Var<'t, T>, NnError> {
    let one = T::one();
    let real_term = (-disc.score(real)?).add_scalar(one).relu().mean();
    let fake_term = disc.score(fake)?.add_scalar(one).relu().mean();
    Ok(real_term + fake_term)
}

/// Pixel MSE plus feature-space MSE through the frozen feature network.
pub fn reconstruction_loss<'t, T: Scalar>(
    x_hat: Var<'t, T>,
    x_h: &Tensor<T>,
    feature_net: &FeatureNet<T>,
) -> Result<Var<'t, T>, NnError> {
    let tape = x_hat.tape();
    let target = tape.constant(x_h.clone());
    let pixel = (x_hat - target).square().mean();
    let feats = (feature_net.forward(x_hat)? - feature_net.forward(target)?)
        .square()
        .mean();
    Ok(pixel + feats)
}
