use std::sync::Arc;

use super::MetricError;
use crate::nn::{mlp_forward, Mlp, NnError, Scalar, Tape, Tensor, Var};
use crate::registry::Registry;
use crate::rng::rng_from_seed;

/// Published seed of the frozen feature network.
pub const FEATURE_NET_SEED: u64 = 20_251_016;
pub const FEATURE_NET_LAYERS: [usize; 2] = [32, 16];

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean per-row PSNR between two batches.
pub fn mean_psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64, MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.rows() == 0 {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for i in 0..a.rows() {
        let x: Vec<f64> = a.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let y: Vec<f64> = b.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        total += psnr(&x, &y, peak)?;
    }
    Ok(total / a.rows() as f64)
}

/// Frozen random feature extractor used as a perceptual-distance stand-in.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet<T> {
    mlp: Mlp<T>,
}

impl<T: Scalar> FeatureNet<T> {
    /// Two layers `dim → 32 → 16` drawn from the fixed seed.
    pub fn seeded(input_dim: usize) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend(FEATURE_NET_LAYERS);
        FeatureNet {
            mlp: Mlp::new(&sizes, &mut rng_from_seed(FEATURE_NET_SEED)),
        }
    }

    pub fn from_mlp(mlp: Mlp<T>) -> Self {
        FeatureNet { mlp }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let vars = self.mlp.params().bind_frozen(x.tape());
        mlp_forward(self.mlp.layer_sizes(), &vars, x)
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let tape = Tape::new();
        Ok(self.forward(tape.constant(x.clone()))?.value())
    }
}

/// Distance between two generated samples of equal length.
pub trait SampleDistance: Send + Sync {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;
}

pub struct Euclidean;

impl SampleDistance for Euclidean {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

/// Euclidean distance between frozen-network features.
pub struct FeatureDistance(pub FeatureNet<f64>);

impl SampleDistance for FeatureDistance {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let x = Tensor::new(2, a.len(), a.iter().chain(b).copied().collect());
        let f = self.0.features(&x).expect("feature net built for this sample size");
        Euclidean.distance(f.row(0), f.row(1))
    }
}

pub fn distance_registry(sample_dim: usize) -> Registry<dyn SampleDistance> {
    let mut reg: Registry<dyn SampleDistance> = Registry::new("sample distance");
    reg.register("euclidean", Arc::new(Euclidean))
        .register("feature", Arc::new(FeatureDistance(FeatureNet::seeded(sample_dim))));
    reg
}

pub const GRADIENT_BINS: usize = 16;
/// Upper edge of the last histogram bin; larger magnitudes fall into it.
pub const GRADIENT_RANGE: f64 = 1.0;

/// Normalized histogram of forward-difference gradient magnitudes of a square patch.
pub fn gradient_histogram(patch: &[f64], side: usize) -> Vec<f64> {
    assert_eq!(patch.len(), side * side, "patch is not {side}x{side}");
    let mut hist = vec![0.0; GRADIENT_BINS];
    let mut count = 0usize;
    for y in 0..side - 1 {
        for x in 0..side - 1 {
            let p = patch[y * side + x];
            let gx = patch[y * side + x + 1] - p;
            let gy = patch[(y + 1) * side + x] - p;
            let mag = (gx * gx + gy * gy).sqrt();
            let bin = ((mag / GRADIENT_RANGE) * GRADIENT_BINS as f64) as usize;
            hist[bin.min(GRADIENT_BINS - 1)] += 1.0;
            count += 1;
        }
    }
    hist.iter_mut().for_each(|h| *h /= count as f64);
    hist
}

/// One gradient histogram per patch row.
pub fn gradient_histograms<T: Scalar>(patches: &Tensor<T>, side: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(patches.rows() * GRADIENT_BINS);
    for i in 0..patches.rows() {
        let p: Vec<f64> = patches.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        data.extend(gradient_histogram(&p, side));
    }
    Tensor::new(patches.rows(), GRADIENT_BINS, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[0.3, 0.4], &[0.3, 0.4], 1.0).unwrap(), f64::INFINITY);
        assert!((psnr(&[0.0], &[1.0], 1.0).unwrap()).abs() < 1e-12);
        assert!((psnr(&[0.0], &[0.1], 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&[0.0], &[0.1, 0.2], 1.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let p = psnr(&[0.0, 0.0], &[0.01 * k as f64, 0.0], 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn feature_net_is_reproducible() {
        let a = FeatureNet::<f64>::seeded(5);
        let b = FeatureNet::<f64>::seeded(5);
        assert_eq!(a, b);
        let x = Tensor::new(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(a.features(&x).unwrap().shape(), (1, 16));
    }

    #[test]
    fn gradient_histogram_of_flat_and_step_patches() {
        let flat = vec![0.5; 16];
        let h = gradient_histogram(&flat, 4);
        assert_eq!(h[0], 1.0);
        // Vertical edge of height 1 between columns 1 and 2.
        let step: Vec<f64> = (0..16).map(|i| if i % 4 >= 2 { 1.0 } else { 0.0 }).collect();
        let h = gradient_histogram(&step, 4);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((h[GRADIENT_BINS - 1] - 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn distances() {
        let reg = distance_registry(3);
        let e = reg.get("euclidean").unwrap();
        assert_eq!(e.distance(&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]), 5.0);
        let f = reg.get("feature").unwrap();
        assert_eq!(f.distance(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]), 0.0);
        assert!(f.distance(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.4]) > 0.0);
    }
}
