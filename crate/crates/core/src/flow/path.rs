use crate::nn::{Scalar, Tensor, Var};

use super::FlowError;

/// One point on the straight path between a data sample and its noise.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub x: Vec<f32>,
    pub eps: Vec<f32>,
    pub t: f64,
    pub z_t: Vec<f32>,
}

impl FlowSample {
    pub fn new(x: Vec<f32>, eps: Vec<f32>, t: f64) -> Result<Self, FlowError> {
        let z_t = interpolate(&x, &eps, t)?;
        Ok(FlowSample { x, eps, t, z_t })
    }
}

fn check_time(t: f64) -> Result<(), FlowError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(FlowError::TimeOutOfRange(t))
    }
}

/// `z_t = (1−t)·x + t·ε`; `t = 0` is data, `t = 1` is noise.
pub fn interpolate<T: Scalar>(x: &[T], eps: &[T], t: f64) -> Result<Vec<T>, FlowError> {
    check_time(t)?;
    assert_eq!(x.len(), eps.len(), "interpolate shape mismatch");
    if t == 0.0 {
        return Ok(x.to_vec());
    }
    if t == 1.0 {
        return Ok(eps.to_vec());
    }
    let (a, b) = (T::from_f64_lossy(1.0 - t), T::from_f64_lossy(t));
    Ok(x.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// Row-wise interpolation of a batch with one time per row.
pub fn interpolate_batch<T: Scalar>(x: &Tensor<T>, eps: &Tensor<T>, t: &[f64]) -> Result<Tensor<T>, FlowError> {
    assert_eq!(x.shape(), eps.shape(), "interpolate shape mismatch");
    assert_eq!(x.rows(), t.len(), "one time per row");
    let mut data = Vec::with_capacity(x.len());
    for (i, &ti) in t.iter().enumerate() {
        data.extend(interpolate(x.row(i), eps.row(i), ti)?);
    }
    Ok(Tensor::new(x.rows(), x.cols(), data))
}

/// Differentiable row-wise interpolation.
pub fn interpolate_var<'t, T: Scalar>(x: Var<'t, T>, eps: Var<'t, T>, t: &[f64]) -> Result<Var<'t, T>, FlowError> {
    for &ti in t {
        check_time(ti)?;
    }
    let tape = x.tape();
    let keep = tape.constant(Tensor::column(t.iter().map(|&v| T::from_f64_lossy(1.0 - v)).collect()));
    let mix = tape.constant(Tensor::column(t.iter().map(|&v| T::from_f64_lossy(v)).collect()));
    Ok(x.mul_col(keep) + eps.mul_col(mix))
}

/// `v = ε − x`, the (time-independent) velocity of the straight path.
pub fn instantaneous_velocity<T: Scalar>(x: &[T], eps: &[T]) -> Vec<T> {
    assert_eq!(x.len(), eps.len(), "velocity shape mismatch");
    x.iter().zip(eps).map(|(&x, &e)| e - x).collect()
}

pub fn instantaneous_velocity_batch<T: Scalar>(x: &Tensor<T>, eps: &Tensor<T>) -> Tensor<T> {
    eps.zip_map(x, |e, x| e - x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Tape};
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let x = [2.0f32, -1.0];
        let e = [0.0f32, 3.0];
        assert_eq!(interpolate(&x, &e, 0.0).unwrap(), x.to_vec());
        assert_eq!(interpolate(&x, &e, 1.0).unwrap(), e.to_vec());
        assert_eq!(interpolate(&[2.0f32], &[0.0], 0.25).unwrap(), vec![1.5]);
    }

    #[test]
    fn time_out_of_range() {
        assert!(matches!(
            interpolate(&[0.0f32], &[1.0], 1.5),
            Err(FlowError::TimeOutOfRange(t)) if t == 1.5
        ));
        assert!(interpolate(&[0.0f32], &[1.0], -0.1).is_err());
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(instantaneous_velocity(&[0.7f32], &[0.7]), vec![0.0]);
        assert_eq!(instantaneous_velocity(&[0.0f32], &[1.0]), vec![1.0]);
        // Same (x, ε) at two different times yields the same target.
        let a = FlowSample::new(vec![0.3], vec![-0.2], 0.1).unwrap();
        let b = FlowSample::new(vec![0.3], vec![-0.2], 0.9).unwrap();
        assert_eq!(
            instantaneous_velocity(&a.x, &a.eps),
            instantaneous_velocity(&b.x, &b.eps)
        );
    }

    #[test]
    fn differentiable_in_all_inputs() {
        let x = Tensor::new(2, 2, vec![0.1, 0.2, -0.3, 0.4]);
        let e = Tensor::new(2, 2, vec![1.0, -1.0, 0.5, 0.25]);
        let err = grad_check(
            |tape, v| {
                let sq = interpolate_var(v[0], v[1], &[0.3, 0.8]).unwrap().square();
                let _ = tape;
                sq.sum()
            },
            &[x, e],
        );
        assert!(err < 1e-6, "{err}");
        let tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::scalar(2.0));
        let ev = tape.constant(Tensor::scalar(0.0));
        assert_eq!(interpolate_var(xv, ev, &[0.25]).unwrap().value().item(), 1.5);
    }

    proptest! {
        #[test]
        fn convex_combination(x in -10.0f64..10.0, e in -10.0f64..10.0, t in 0.0f64..=1.0) {
            let z = interpolate(&[x], &[e], t).unwrap()[0];
            prop_assert!((z - ((1.0 - t) * x + t * e)).abs() <= 1e-12);
            prop_assert!(z >= x.min(e) - 1e-12 && z <= x.max(e) + 1e-12);
        }
    }
}
