use rand::Rng;

use super::losses::{backward_integrate, Interval, IntervalSampler};
use super::student::StudentModel;
use crate::flow::AnalyticField;
use crate::nn::{NnError, Scalar, Tensor};
use crate::rng::uniform;

/// `ẑ = ε − u(ε, 0, 1; c)`: one network evaluation.
pub fn one_step_sample<T: Scalar>(
    student: &StudentModel<T>,
    eps: &Tensor<T>,
    cond: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    multi_step_sample(student, eps, cond, 1)
}

/// Chains `k` equal backward jumps from `t = 1` to `t = 0`.
pub fn multi_step_sample<T: Scalar>(
    student: &StudentModel<T>,
    eps: &Tensor<T>,
    cond: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>, NnError> {
    assert!(k >= 1, "at least one step");
    let n = eps.rows();
    let mut z = eps.clone();
    for i in 0..k {
        let t = 1.0 - i as f64 / k as f64;
        let r = if i + 1 == k {
            0.0
        } else {
            1.0 - (i + 1) as f64 / k as f64
        };
        let (rs, ts) = (vec![r; n], vec![t; n]);
        let u = student.average_velocity_eval(&z, &rs, &ts, cond)?;
        z = backward_integrate(&z, &rs, &ts, &u);
    }
    Ok(z)
}

/// A single-state average-velocity field for identity diagnostics.
pub trait MeanVelocity {
    fn mean_velocity(&self, z: &[f64], r: f64, t: f64) -> Vec<f64>;
    /// Exact state at time `s` on the trajectory through `z` at `t`, if known.
    fn exact_state(&self, _z: &[f64], _t: f64, _s: f64) -> Option<Vec<f64>> {
        None
    }
}

impl<F: AnalyticField + ?Sized> MeanVelocity for F {
    fn mean_velocity(&self, z: &[f64], r: f64, t: f64) -> Vec<f64> {
        self.average_velocity(z, r, t)
    }
    fn exact_state(&self, z: &[f64], t: f64, s: f64) -> Option<Vec<f64>> {
        self.transport(z, t, s)
    }
}

/// A student with a fixed single condition row.
pub struct StudentField<'a> {
    pub student: &'a StudentModel<f64>,
    pub cond: Vec<f64>,
}

impl MeanVelocity for StudentField<'_> {
    fn mean_velocity(&self, z: &[f64], r: f64, t: f64) -> Vec<f64> {
        let zt = Tensor::new(1, z.len(), z.to_vec());
        let c = Tensor::new(1, self.cond.len(), self.cond.clone());
        self.student
            .average_velocity_eval(&zt, &[r], &[t], &c)
            .expect("student shapes fixed at construction")
            .into_data()
    }
}

/// `max_i |(t−r)u(z_t,r,t) − (s−r)u(z_s,r,s) − (t−s)u(z_t,s,t)|`.
///
/// `z_s` is the exact state when the field provides one, else one backward
/// jump with the field's own short-interval prediction.
pub fn isc_residual<F: MeanVelocity + ?Sized>(field: &F, z: &[f64], iv: Interval) -> f64 {
    let Interval { r, s, t, .. } = iv;
    let u_long = field.mean_velocity(z, r, t);
    let u_short = field.mean_velocity(z, s, t);
    let z_s = field
        .exact_state(z, t, s)
        .unwrap_or_else(|| z.iter().zip(&u_short).map(|(x, u)| x - (t - s) * u).collect());
    let u_first = field.mean_velocity(&z_s, r, s);
    (0..z.len())
        .map(|i| ((t - r) * u_long[i] - (s - r) * u_first[i] - (t - s) * u_short[i]).abs())
        .fold(0.0, f64::max)
}

/// Worst residual over random intervals and states `z ~ U(-2, 2)^dim`.
pub fn isc_residual_scan<F: MeanVelocity + ?Sized>(field: &F, trials: usize, dim: usize, rng: &mut impl Rng) -> f64 {
    let sampler = IntervalSampler {
        full_interval_prob: 0.0,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let iv = sampler.sample(rng);
        let z: Vec<f64> = (0..dim).map(|_| 4.0 * uniform(rng) - 2.0).collect();
        worst = worst.max(isc_residual(field, &z, iv));
    }
    worst
}
