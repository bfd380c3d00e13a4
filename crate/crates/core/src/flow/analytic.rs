//! Closed-form velocity fields with known average velocities.
//!
//! These serve as exact references for the splitting identity and the flow
//! identity, and as sanity fields for the samplers.

use std::sync::Arc;

use rand::Rng;

use crate::nn::Tensor;
use crate::registry::Registry;
use crate::rng::uniform;

pub trait AnalyticField: Send + Sync {
    fn name(&self) -> &str;
    /// Instantaneous velocity `v(z, t)`.
    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64>;
    /// Average velocity `u(z_t, r, t)` over `[r, t]`.
    fn average_velocity(&self, z: &[f64], r: f64, t: f64) -> Vec<f64>;
    /// Exact transport of a state at time `from` to time `to`, if known.
    fn transport(&self, z: &[f64], from: f64, to: f64) -> Option<Vec<f64>>;
}

/// `v ≡ c`.
#[derive(Clone, Debug)]
pub struct ConstantField {
    pub value: f64,
}

impl AnalyticField for ConstantField {
    fn name(&self) -> &str {
        "constant"
    }
    fn velocity(&self, z: &[f64], _t: f64) -> Vec<f64> {
        vec![self.value; z.len()]
    }
    fn average_velocity(&self, z: &[f64], _r: f64, _t: f64) -> Vec<f64> {
        vec![self.value; z.len()]
    }
    fn transport(&self, z: &[f64], from: f64, to: f64) -> Option<Vec<f64>> {
        Some(z.iter().map(|&x| x - (from - to) * self.value).collect())
    }
}

/// `v = a·τ`, whose average over `[r, t]` is `a(t + r)/2`.
#[derive(Clone, Debug)]
pub struct LinearTimeField {
    pub slope: f64,
}

impl AnalyticField for LinearTimeField {
    fn name(&self) -> &str {
        "linear-time"
    }
    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        vec![self.slope * t; z.len()]
    }
    fn average_velocity(&self, z: &[f64], r: f64, t: f64) -> Vec<f64> {
        vec![0.5 * self.slope * (t + r); z.len()]
    }
    fn transport(&self, z: &[f64], from: f64, to: f64) -> Option<Vec<f64>> {
        let shift = 0.5 * self.slope * (from * from - to * to);
        Some(z.iter().map(|&x| x - shift).collect())
    }
}

/// `v = α·z`; states evolve as `z_τ = z_t·e^{α(τ−t)}`.
#[derive(Clone, Debug)]
pub struct ExponentialField {
    pub rate: f64,
}

impl AnalyticField for ExponentialField {
    fn name(&self) -> &str {
        "exponential"
    }
    fn velocity(&self, z: &[f64], _t: f64) -> Vec<f64> {
        z.iter().map(|&x| self.rate * x).collect()
    }
    fn average_velocity(&self, z: &[f64], r: f64, t: f64) -> Vec<f64> {
        let h = t - r;
        // (1 − e^{−αh})/h, with its limit α at h → 0.
        let k = if h.abs() < 1e-12 {
            self.rate
        } else {
            -(-self.rate * h).exp_m1() / h
        };
        z.iter().map(|&x| k * x).collect()
    }
    fn transport(&self, z: &[f64], from: f64, to: f64) -> Option<Vec<f64>> {
        let k = (self.rate * (to - from)).exp();
        Some(z.iter().map(|&x| k * x).collect())
    }
}

/// Straight-line flow towards a single data point `x₀`: `v = (z − x₀)/t`.
#[derive(Clone, Debug)]
pub struct PointMassField {
    pub target: f64,
}

impl AnalyticField for PointMassField {
    fn name(&self) -> &str {
        "point-mass"
    }
    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        z.iter().map(|&x| (x - self.target) / t).collect()
    }
    fn average_velocity(&self, z: &[f64], _r: f64, t: f64) -> Vec<f64> {
        self.velocity(z, t)
    }
    fn transport(&self, z: &[f64], from: f64, to: f64) -> Option<Vec<f64>> {
        Some(
            z.iter()
                .map(|&x| self.target + (to / from) * (x - self.target))
                .collect(),
        )
    }
}

/// `u = t²`, which is not the average of any velocity field.
#[derive(Clone, Debug)]
pub struct WrongQuadraticField;

impl AnalyticField for WrongQuadraticField {
    fn name(&self) -> &str {
        "wrong-quadratic"
    }
    fn velocity(&self, z: &[f64], t: f64) -> Vec<f64> {
        vec![t * t; z.len()]
    }
    fn average_velocity(&self, z: &[f64], _r: f64, t: f64) -> Vec<f64> {
        vec![t * t; z.len()]
    }
    fn transport(&self, _z: &[f64], _from: f64, _to: f64) -> Option<Vec<f64>> {
        None
    }
}

pub fn analytic_registry() -> Registry<dyn AnalyticField> {
    let mut reg: Registry<dyn AnalyticField> = Registry::new("analytic field");
    reg.register("constant", Arc::new(ConstantField { value: 1.5 }))
        .register("linear-time", Arc::new(LinearTimeField { slope: 2.0 }))
        .register("exponential", Arc::new(ExponentialField { rate: 0.8 }))
        .register("point-mass", Arc::new(PointMassField { target: 0.4 }))
        .register("wrong-quadratic", Arc::new(WrongQuadraticField));
    reg
}

/// Instantaneous velocity of an analytic field as a batched ODE field.
pub struct AnalyticVelocity<'a>(pub &'a dyn AnalyticField);

impl super::VelocityField<f64> for AnalyticVelocity<'_> {
    fn velocity(&self, z: &Tensor<f64>, t: f64) -> Tensor<f64> {
        let mut data = Vec::with_capacity(z.len());
        for i in 0..z.rows() {
            data.extend(self.0.velocity(z.row(i), t));
        }
        Tensor::new(z.rows(), z.cols(), data)
    }
}

/// Residual of `u = v − (t − r)·du/dt` at one point.
///
/// The total derivative follows the exact trajectory through `z` and is
/// taken by a central difference with step `h`.
pub fn flow_identity_residual(field: &dyn AnalyticField, z: &[f64], r: f64, t: f64, h: f64) -> Option<f64> {
    let ahead = field.transport(z, t, t + h)?;
    let behind = field.transport(z, t, t - h)?;
    let up = field.average_velocity(&ahead, r, t + h);
    let down = field.average_velocity(&behind, r, t - h);
    let u = field.average_velocity(z, r, t);
    let v = field.velocity(z, t);
    (0..z.len())
        .map(|i| {
            let du_dt = (up[i] - down[i]) / (2.0 * h);
            (u[i] - (v[i] - (t - r) * du_dt)).abs()
        })
        .reduce(f64::max)
}

/// Worst flow-identity residual over random `(z, r, t)`; `t` is kept away from zero.
pub fn flow_identity_scan(field: &dyn AnalyticField, trials: usize, dim: usize, rng: &mut impl Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let z: Vec<f64> = (0..dim).map(|_| 4.0 * uniform(rng) - 2.0).collect();
        let a = 0.05 + 0.95 * uniform(rng);
        let b = 0.05 + 0.95 * uniform(rng);
        let (r, t) = if a <= b { (a, b) } else { (b, a) };
        if let Some(res) = flow_identity_residual(field, &z, r, t, 1e-4) {
            worst = worst.max(res);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn flow_identity_holds_for_exact_fields() {
        let reg = analytic_registry();
        for name in ["constant", "linear-time", "exponential", "point-mass"] {
            let f = reg.get(name).unwrap();
            let worst = flow_identity_scan(f.as_ref(), 1000, 3, &mut rng_from_seed(42));
            assert!(worst <= 1e-4, "{name}: {worst}");
        }
    }

    #[test]
    fn average_of_exponential_matches_transport() {
        let f = ExponentialField { rate: 0.8 };
        let z = [1.3];
        let (r, t) = (0.2, 0.9);
        let zr = f.transport(&z, t, r).unwrap();
        let u = f.average_velocity(&z, r, t)[0];
        assert!((u - (z[0] - zr[0]) / (t - r)).abs() < 1e-12);
    }

    #[test]
    fn wrong_field_has_no_transport() {
        assert!(flow_identity_residual(&WrongQuadraticField, &[0.0], 0.1, 0.5, 1e-4).is_none());
    }
}
