use crate::nn::{Scalar, Tensor};

/// Lowest and highest angular frequency of the time features.
const MIN_FREQ: f64 = 1.0;
const MAX_FREQ: f64 = 64.0;

/// Sinusoidal features `[sin(f_k t)…, cos(f_k t)…]` with `dim/2` geometric frequencies.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim.is_multiple_of(2), "embedding width must be even");
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| {
            let frac = if half == 1 { 0.0 } else { k as f64 / (half - 1) as f64 };
            MIN_FREQ * (MAX_FREQ / MIN_FREQ).powf(frac)
        })
        .collect();
    let mut out: Vec<f64> = freqs.iter().map(|f| (f * t).sin()).collect();
    out.extend(freqs.iter().map(|f| (f * t).cos()));
    out
}

/// One embedding row per time.
pub fn time_embedding<T: Scalar>(times: &[f64], dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(times.len() * dim);
    for &t in times {
        data.extend(time_features(t, dim).into_iter().map(T::from_f64_lossy));
    }
    Tensor::new(times.len(), dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_origin() {
        let f = time_features(0.0, 8);
        assert_eq!(f.len(), 8);
        assert_eq!(&f[..4], &[0.0; 4]);
        assert_eq!(&f[4..], &[1.0; 4]);
        let e = time_embedding::<f32>(&[0.0, 0.5, 1.0], 16);
        assert_eq!(e.shape(), (3, 16));
    }

    #[test]
    fn distinct_times_distinct_features() {
        assert_ne!(time_features(0.3, 16), time_features(0.31, 16));
    }
}
