//! Procedural conditional datasets.

use std::f64::consts::PI;

use rand::Rng;

use super::degrade::{degrade, DegradationParams};
use super::{DataError, DatasetGenerator, ToyDataset};
use crate::rng::{derive_index_seed, normal, rng_from_seed, uniform};

/// Builds `n` samples, sample `i` drawn from its own index-derived stream.
fn build(
    name: &str,
    hr_shape: Vec<usize>,
    lr_shape: Vec<usize>,
    n: usize,
    seed: u64,
    mut sample: impl FnMut(&mut crate::rng::SeededRng) -> Result<(Vec<f32>, Vec<f32>), DataError>,
) -> Result<ToyDataset, DataError> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    let dh: usize = hr_shape.iter().product();
    let dl: usize = lr_shape.iter().product();
    let mut hr = Vec::with_capacity(n * dh);
    let mut lr = Vec::with_capacity(n * dl);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_index_seed(seed, i as u64));
        let (h, l) = sample(&mut rng)?;
        debug_assert_eq!((h.len(), l.len()), (dh, dl));
        hr.extend(h);
        lr.extend(l);
    }
    Ok(ToyDataset {
        name: name.to_string(),
        hr_shape,
        lr_shape,
        hr,
        lr,
        seed: Some(seed),
    })
}

/// Two interleaved half circles; the observation is the first coordinate plus noise.
#[derive(Clone, Debug)]
pub struct TwoMoons {
    pub point_noise: f64,
    pub observation_noise: f64,
}

impl Default for TwoMoons {
    fn default() -> Self {
        TwoMoons {
            point_noise: 0.08,
            observation_noise: 0.1,
        }
    }
}

impl TwoMoons {
    fn draw(&self, rng: &mut impl Rng) -> (u8, Vec<f32>, Vec<f32>) {
        let moon = u8::from(uniform(rng) < 0.5);
        let angle = PI * uniform(rng);
        let (mut x, mut y) = if moon == 0 {
            (angle.cos(), angle.sin())
        } else {
            (1.0 - angle.cos(), 0.5 - angle.sin())
        };
        x += self.point_noise * normal(rng) - 0.5;
        y += self.point_noise * normal(rng) - 0.25;
        let obs = x + self.observation_noise * normal(rng);
        (moon, vec![x as f32, y as f32], vec![obs as f32])
    }

    /// Dataset plus the moon index each sample was drawn from.
    pub fn generate_labeled(&self, n: usize, seed: u64) -> Result<(ToyDataset, Vec<u8>), DataError> {
        let mut labels = Vec::with_capacity(n);
        let ds = build(self.name(), vec![2], vec![1], n, seed, |rng| {
            let (label, h, l) = self.draw(rng);
            labels.push(label);
            Ok((h, l))
        })?;
        Ok((ds, labels))
    }
}

impl DatasetGenerator for TwoMoons {
    fn name(&self) -> &str {
        "two-moons-conditional"
    }

    fn shapes(&self) -> (Vec<usize>, Vec<usize>) {
        (vec![2], vec![1])
    }

    fn generate(&self, n: usize, seed: u64) -> Result<ToyDataset, DataError> {
        self.generate_labeled(n, seed).map(|(ds, _)| ds)
    }
}

/// Isotropic Gaussians on a ring; the observation is a fixed 1D projection plus noise.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    pub components: usize,
    pub radius: f64,
    pub component_std: f64,
    pub projection_angle: f64,
    pub observation_noise: f64,
}

impl Default for GaussianMixture {
    fn default() -> Self {
        GaussianMixture {
            components: 8,
            radius: 1.5,
            component_std: 0.12,
            projection_angle: 0.3,
            observation_noise: 0.1,
        }
    }
}

impl DatasetGenerator for GaussianMixture {
    fn name(&self) -> &str {
        "gaussian-mixture-conditional"
    }

    fn shapes(&self) -> (Vec<usize>, Vec<usize>) {
        (vec![2], vec![1])
    }

    fn generate(&self, n: usize, seed: u64) -> Result<ToyDataset, DataError> {
        let (ca, sa) = (self.projection_angle.cos(), self.projection_angle.sin());
        build(self.name(), vec![2], vec![1], n, seed, |rng| {
            let k = rng.random_range(0..self.components);
            let phi = 2.0 * PI * k as f64 / self.components as f64;
            let x = self.radius * phi.cos() + self.component_std * normal(rng);
            let y = self.radius * phi.sin() + self.component_std * normal(rng);
            let obs = x * ca + y * sa + self.observation_noise * normal(rng);
            Ok((vec![x as f32, y as f32], vec![obs as f32]))
        })
    }
}

/// Procedural grayscale textures (stripes, checkers, band-limited noise) and
/// their degraded observations.
#[derive(Clone, Debug)]
pub struct TinyPatches {
    pub side: usize,
    pub degradation: DegradationParams,
}

pub const PATCH_SIDE: usize = 16;

impl TinyPatches {
    pub fn new(degradation: DegradationParams) -> Self {
        TinyPatches {
            side: PATCH_SIDE,
            degradation,
        }
    }

    fn low_side(&self) -> usize {
        self.side / self.degradation.downsample_factor.max(1)
    }

    /// One clean texture patch with values in `[0,1]`.
    pub fn texture(&self, rng: &mut impl Rng) -> Vec<f32> {
        let s = self.side;
        let mean = 0.3 + 0.4 * uniform(rng);
        let mut px = vec![0.0f64; s * s];
        match rng.random_range(0..3u8) {
            0 => {
                let freq = 0.05 + 0.4 * uniform(rng);
                let theta = PI * uniform(rng);
                let phase = 2.0 * PI * uniform(rng);
                let amp = 0.2 + 0.3 * uniform(rng);
                let (c, sn) = (theta.cos(), theta.sin());
                for y in 0..s {
                    for x in 0..s {
                        let u = x as f64 * c + y as f64 * sn;
                        px[y * s + x] = mean + amp * (2.0 * PI * freq * u + phase).sin();
                    }
                }
            }
            1 => {
                let cell = rng.random_range(1..=4usize);
                let (ox, oy) = (rng.random_range(0..cell), rng.random_range(0..cell));
                let contrast = 0.2 + 0.3 * uniform(rng);
                for y in 0..s {
                    for x in 0..s {
                        let parity = ((x + ox) / cell + (y + oy) / cell) % 2;
                        let sign = if parity == 0 { 1.0 } else { -1.0 };
                        px[y * s + x] = mean + sign * contrast;
                    }
                }
            }
            _ => {
                let waves = 6;
                let lo = 0.08 + 0.1 * uniform(rng);
                let hi = lo + 0.1 + 0.2 * uniform(rng);
                let amp = (0.3 + 0.2 * uniform(rng)) / (waves as f64).sqrt();
                let comps: Vec<(f64, f64, f64, f64)> = (0..waves)
                    .map(|_| {
                        let f = lo + (hi - lo) * uniform(rng);
                        let th = 2.0 * PI * uniform(rng);
                        (f * th.cos(), f * th.sin(), 2.0 * PI * uniform(rng), normal(rng))
                    })
                    .collect();
                for y in 0..s {
                    for x in 0..s {
                        let v: f64 = comps
                            .iter()
                            .map(|&(fx, fy, ph, a)| a * (2.0 * PI * (fx * x as f64 + fy * y as f64) + ph).sin())
                            .sum();
                        px[y * s + x] = mean + amp * v;
                    }
                }
            }
        }
        px.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect()
    }
}

impl DatasetGenerator for TinyPatches {
    fn name(&self) -> &str {
        "tiny-patches"
    }

    fn shapes(&self) -> (Vec<usize>, Vec<usize>) {
        let l = self.low_side();
        (vec![self.side, self.side], vec![l, l])
    }

    fn generate(&self, n: usize, seed: u64) -> Result<ToyDataset, DataError> {
        let (hs, ls) = self.shapes();
        build(self.name(), hs, ls, n, seed, |rng| {
            let h = self.texture(rng);
            let l = degrade(&h, self.side, &self.degradation, rng)?;
            Ok((h, l))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_samples_rejected() {
        assert!(matches!(TwoMoons::default().generate(0, 1), Err(DataError::Empty)));
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        for g in [
            Box::new(TwoMoons::default()) as Box<dyn DatasetGenerator>,
            Box::new(GaussianMixture::default()),
            Box::new(TinyPatches::new(DegradationParams::default())),
        ] {
            let a = g.generate(64, 11).unwrap();
            let b = g.generate(64, 11).unwrap();
            assert_eq!(a, b);
            let c = g.generate(64, 12).unwrap();
            assert_ne!(a.hr, c.hr);
        }
    }

    #[test]
    fn moons_are_balanced() {
        let (_, labels) = TwoMoons::default().generate_labeled(10_000, 2024).unwrap();
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() <= 0.02, "{ones}");
    }

    #[test]
    fn patches_have_declared_shapes_and_range() {
        let ds = TinyPatches::new(DegradationParams::default()).generate(32, 3).unwrap();
        assert_eq!(ds.hr_shape, vec![16, 16]);
        assert_eq!(ds.lr_shape, vec![8, 8]);
        assert_eq!(ds.hr.len(), 32 * 256);
        assert_eq!(ds.lr.len(), 32 * 64);
        assert!(ds.hr.iter().chain(&ds.lr).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn prefix_property() {
        let g = GaussianMixture::default();
        let small = g.generate(10, 5).unwrap();
        let big = g.generate(20, 5).unwrap();
        assert_eq!(small.hr[..], big.hr[..20]);
    }
}
