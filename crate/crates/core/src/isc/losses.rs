use rand::Rng;
use serde::{Deserialize, Serialize};

use super::student::BoundStudent;
use crate::flow::TeacherModel;
use crate::nn::{NnError, Scalar, Tensor, Var};
use crate::rng::uniform;

/// A split `0 ≤ r ≤ s ≤ t ≤ 1` with `s = (1−λ)t + λr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub r: f64,
    pub s: f64,
    pub t: f64,
    pub lambda: f64,
}

impl Interval {
    /// Places `s` at fraction `lambda` of the way from `t` down to `r`.
    pub fn from_lambda(r: f64, t: f64, lambda: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&r) && r <= t && t <= 1.0 && (0.0..=1.0).contains(&lambda),
            "invalid interval r={r} t={t} lambda={lambda}"
        );
        let s = ((1.0 - lambda) * t + lambda * r).clamp(r, t);
        Interval { r, s, t, lambda }
    }

    /// The degenerate interval `r = s = t` used by the boundary branch.
    pub fn point(t: f64) -> Self {
        Interval::from_lambda(t, t, 0.0)
    }
}

/// Distribution of `(r, t)`: two sorted uniforms, replaced by the full
/// interval `(0, 1)` with probability `full_interval_prob`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSampler {
    pub full_interval_prob: f64,
}

impl Default for IntervalSampler {
    fn default() -> Self {
        IntervalSampler {
            full_interval_prob: 0.25,
        }
    }
}

impl IntervalSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> Interval {
        let a = uniform(rng);
        let b = uniform(rng);
        let lambda = uniform(rng);
        let (r, t) = if uniform(rng) < self.full_interval_prob {
            (0.0, 1.0)
        } else if a <= b {
            (a, b)
        } else {
            (b, a)
        };
        Interval::from_lambda(r, t, lambda)
    }
}

/// Default-distribution interval.
pub fn sample_interval(rng: &mut impl Rng) -> Interval {
    IntervalSampler::default().sample(rng)
}

fn column<T: Scalar>(values: impl Iterator<Item = f64>) -> Tensor<T> {
    Tensor::column(values.map(T::from_f64_lossy).collect())
}

/// One jump per row: `z_s = z_t − (t − s)·u`.
pub fn backward_integrate<T: Scalar>(z_t: &Tensor<T>, s: &[f64], t: &[f64], u: &Tensor<T>) -> Tensor<T> {
    assert_eq!(z_t.shape(), u.shape(), "state and velocity shapes differ");
    assert_eq!(s.len(), z_t.rows());
    let mut out = z_t.clone();
    let cols = z_t.cols();
    for (i, row) in out.data_mut().chunks_mut(cols).enumerate() {
        let h = T::from_f64_lossy(t[i] - s[i]);
        for (x, &v) in row.iter_mut().zip(u.row(i)) {
            *x = *x - h * v;
        }
    }
    out
}

fn mean_sq_error<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Var<'t, T> {
    let n = T::from_usize(pred.shape().0).expect("batch size");
    (pred - target).square().sum().scale(T::one() / n)
}

fn split_times(intervals: &[Interval]) -> [Vec<f64>; 3] {
    [
        intervals.iter().map(|i| i.r).collect(),
        intervals.iter().map(|i| i.s).collect(),
        intervals.iter().map(|i| i.t).collect(),
    ]
}

/// The splitting target `(1−λ)·u(z_s, r, s) + λ·u(z_t, s, t)` as a graph
/// node, with `z_s` from one backward jump using the short-interval prediction.
pub fn isc_target<'t, T: Scalar>(
    student: &BoundStudent<'_, 't, T>,
    z_t: Var<'t, T>,
    intervals: &[Interval],
    cond: Var<'t, T>,
) -> Result<Var<'t, T>, NnError> {
    let tape = z_t.tape();
    let [r, s, t] = split_times(intervals);
    let u2 = student.average_velocity(z_t, &s, &t, cond)?;
    let gap = tape.constant(column(intervals.iter().map(|i| i.t - i.s)));
    let z_s = z_t - u2.mul_col(gap);
    let u1 = student.average_velocity(z_s, &r, &s, cond)?;
    let keep = tape.constant(column(intervals.iter().map(|i| 1.0 - i.lambda)));
    let lam = tape.constant(column(intervals.iter().map(|i| i.lambda)));
    Ok(u1.mul_col(keep) + u2.mul_col(lam))
}

/// `mean ‖u(z_t, r, t) − sg[target]‖²` where the target is built in-graph and detached.
pub fn isc_loss<'t, T: Scalar>(
    student: &BoundStudent<'_, 't, T>,
    z_t: &Tensor<T>,
    intervals: &[Interval],
    cond: &Tensor<T>,
) -> Result<Var<'t, T>, NnError> {
    let tape = student.vars[0].tape();
    let z = tape.constant(z_t.clone());
    let c = tape.constant(cond.clone());
    let target = isc_target(student, z, intervals, c)?.stop_gradient();
    let [r, _, t] = split_times(intervals);
    let pred = student.average_velocity(z, &r, &t, c)?;
    Ok(mean_sq_error(pred, target))
}

/// Splitting loss against an externally computed target.
pub fn isc_loss_with_target<'t, T: Scalar>(
    student: &BoundStudent<'_, 't, T>,
    z_t: &Tensor<T>,
    intervals: &[Interval],
    cond: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<Var<'t, T>, NnError> {
    let tape = student.vars[0].tape();
    let [r, _, t] = split_times(intervals);
    let pred = student.average_velocity(tape.constant(z_t.clone()), &r, &t, tape.constant(cond.clone()))?;
    Ok(mean_sq_error(pred, tape.constant(target.clone())))
}

/// `mean ‖u(z_t, t, t) − v^w(z_t, t)‖²` against the frozen teacher.
pub fn boundary_loss<'t, T: Scalar>(
    student: &BoundStudent<'_, 't, T>,
    teacher: &TeacherModel<T>,
    z_t: &Tensor<T>,
    t: &[f64],
    cond: &Tensor<T>,
    guidance: Option<f64>,
) -> Result<Var<'t, T>, NnError> {
    let tape = student.vars[0].tape();
    let v = teacher.velocity_eval(z_t, t, cond, guidance)?;
    let pred = student.average_velocity(tape.constant(z_t.clone()), t, t, tape.constant(cond.clone()))?;
    Ok(mean_sq_error(pred, tape.constant(v)))
}
