use rand::Rng;

use super::MetricError;
use crate::nn::{Scalar, Tensor};
use crate::rng::{normal, rng_from_seed};

pub const DEFAULT_PROJECTIONS: usize = 256;
pub const DEFAULT_PROJECTION_SEED: u64 = 0x5157_0A55;

/// Squared 1D 2-Wasserstein distance between two sorted empirical samples.
///
/// Equal sizes use the sorted pairing directly; otherwise the quantile
/// functions are integrated exactly over the merged breakpoints.
pub fn wasserstein2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    }
    let (mut i, mut j) = (0, 0);
    let mut q = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - q) * (a[i] - b[j]).powi(2);
        q = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Random unit directions in `dim` dimensions.
pub fn random_directions(dim: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let d: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break d.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn project<T: Scalar>(points: &Tensor<T>, dir: &[f64]) -> Vec<f64> {
    (0..points.rows())
        .map(|i| {
            points
                .row(i)
                .iter()
                .zip(dir)
                .map(|(x, d)| x.to_f64().expect("finite") * d)
                .sum()
        })
        .collect()
}

/// Sliced 2-Wasserstein distance over the given directions: the mean over
/// directions of the 1D W2 between projected samples.
pub fn sliced_wasserstein_with<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    directions: &[Vec<f64>],
) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    if a.cols() != b.cols() {
        return Err(MetricError::Dimension {
            expected: a.cols(),
            got: b.cols(),
        });
    }
    if directions.is_empty() {
        return Err(MetricError::Empty);
    }
    let total: f64 = directions
        .iter()
        .map(|d| wasserstein2_sq_sorted(&sorted(project(a, d)), &sorted(project(b, d))).sqrt())
        .sum();
    Ok(total / directions.len() as f64)
}

/// Sliced 2-Wasserstein distance with `n_projections` directions drawn from `rng`.
pub fn sliced_wasserstein<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    n_projections: usize,
    rng: &mut impl Rng,
) -> Result<f64, MetricError> {
    let dirs = random_directions(a.cols(), n_projections, rng);
    sliced_wasserstein_with(a, b, &dirs)
}

/// Sliced Wasserstein with the default projection count and fixed projection seed.
pub fn sliced_wasserstein_default<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricError> {
    sliced_wasserstein(a, b, DEFAULT_PROJECTIONS, &mut rng_from_seed(DEFAULT_PROJECTION_SEED))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian(n: usize, shift: f64, seed: u64) -> Tensor<f64> {
        let mut rng = rng_from_seed(seed);
        let data = (0..n)
            .flat_map(|_| [normal(&mut rng) + shift, normal(&mut rng)])
            .collect::<Vec<_>>();
        Tensor::new(n, 2, data)
    }

    #[test]
    fn identical_sets_are_at_distance_zero() {
        let a = gaussian(300, 0.0, 1);
        assert_eq!(sliced_wasserstein_default(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn point_masses() {
        let a = Tensor::new(1, 1, vec![0.0]);
        let b = Tensor::new(1, 1, vec![1.0]);
        assert!((sliced_wasserstein_default(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        // Unequal sizes of the same point masses.
        let b3 = Tensor::new(3, 1, vec![1.0; 3]);
        assert!((sliced_wasserstein_default(&a, &b3).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unequal_sizes_match_replicated_equal_sizes() {
        // Repeating every point k times leaves the empirical law unchanged.
        let a = [0.1, 0.5, 2.0];
        let b = [-1.0, 0.0, 0.3, 4.0];
        let rep = |v: &[f64], k: usize| sorted(v.iter().flat_map(|x| std::iter::repeat_n(*x, k)).collect());
        let exact = wasserstein2_sq_sorted(&rep(&a, 4), &rep(&b, 3));
        assert!((wasserstein2_sq_sorted(&a, &b) - exact).abs() < 1e-12);
    }

    #[test]
    fn shifted_gaussians_match_dense_reference() {
        // For a shift d along x, each direction θ contributes |d·cos θ| plus sampling noise.
        let a = gaussian(4000, 0.0, 2);
        let b = gaussian(4000, 1.0, 3);
        let est = sliced_wasserstein_default(&a, &b).unwrap();
        let dense = sliced_wasserstein(&a, &b, 10_000, &mut rng_from_seed(4)).unwrap();
        assert!((est - dense).abs() <= 0.05 * dense, "{est} vs {dense}");
        // Population value: E|cos θ| = 2/π.
        assert!((dense - 2.0 / std::f64::consts::PI).abs() < 0.05, "{dense}");
    }

    #[test]
    fn dimension_mismatch_and_empty() {
        let a = Tensor::new(1, 2, vec![0.0, 0.0]);
        let b = Tensor::new(1, 3, vec![0.0; 3]);
        assert!(matches!(
            sliced_wasserstein_default(&a, &b),
            Err(MetricError::Dimension { .. })
        ));
        let e = Tensor::<f64>::zeros(0, 2);
        assert!(matches!(sliced_wasserstein_default(&a, &e), Err(MetricError::Empty)));
    }

    proptest! {
        #[test]
        fn symmetric(seed in 0u64..1000, n in 1usize..40, m in 1usize..40) {
            let a = gaussian(n, 0.3, seed);
            let b = gaussian(m, -0.2, seed + 7);
            let dirs = random_directions(2, 32, &mut rng_from_seed(seed));
            let ab = sliced_wasserstein_with(&a, &b, &dirs).unwrap();
            let ba = sliced_wasserstein_with(&b, &a, &dirs).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!(ab >= 0.0);
        }
    }
}
