use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::rng::normal;

/// Toy low-resolution observation operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationParams {
    pub downsample_factor: usize,
    pub noise_std: f64,
    #[serde(default)]
    pub quantize_levels: Option<u32>,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            downsample_factor: 2,
            noise_std: 0.02,
            quantize_levels: Some(32),
        }
    }
}

/// Block-average downsample, add Gaussian noise, optionally quantize, clamp to `[0,1]`.
///
/// `x_h` is a square `side×side` row-major patch.
pub fn degrade(
    x_h: &[f32],
    side: usize,
    params: &DegradationParams,
    rng: &mut impl Rng,
) -> Result<Vec<f32>, DataError> {
    let f = params.downsample_factor;
    if x_h.len() != side * side {
        return Err(DataError::Dimension(format!(
            "patch has {} values, expected {side}x{side}",
            x_h.len()
        )));
    }
    if f == 0 || !side.is_multiple_of(f) {
        return Err(DataError::Dimension(format!(
            "downsample factor {f} does not divide patch side {side}"
        )));
    }
    let lo = side / f;
    let area = (f * f) as f64;
    let mut out = Vec::with_capacity(lo * lo);
    for by in 0..lo {
        for bx in 0..lo {
            let mut acc = 0.0f64;
            for dy in 0..f {
                for dx in 0..f {
                    acc += x_h[(by * f + dy) * side + bx * f + dx] as f64;
                }
            }
            let mut v = acc / area;
            if params.noise_std > 0.0 {
                v += params.noise_std * normal(rng);
            }
            if let Some(levels) = params.quantize_levels {
                let steps = (levels.max(2) - 1) as f64;
                v = (v * steps).round() / steps;
            }
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(out)
}
