use super::fidelity::{gradient_histograms, mean_psnr, FeatureNet, SampleDistance};
use super::sw::sliced_wasserstein_default;
use super::MetricError;
use crate::data::{encode_batch, ToyDataset};
use crate::flow::{ode_sample, SamplerConfig, TeacherField, TeacherModel};
use crate::isc::{multi_step_sample, StudentModel};
use crate::nn::Tensor;
use crate::rng::{derive_seed, normal_vec, rng_from_seed};

/// Maps starting noise and conditions to samples.
pub trait Generator {
    fn generate(&self, eps: &Tensor<f32>, cond: &Tensor<f32>) -> Result<Tensor<f32>, MetricError>;
}

/// `k`-jump student sampling (`k = 1` is one-step generation).
pub struct StudentSampler<'a> {
    pub student: &'a StudentModel<f32>,
    pub steps: usize,
}

impl Generator for StudentSampler<'_> {
    fn generate(&self, eps: &Tensor<f32>, cond: &Tensor<f32>) -> Result<Tensor<f32>, MetricError> {
        Ok(multi_step_sample(self.student, eps, cond, self.steps)?)
    }
}

/// Teacher ODE sampling.
pub struct TeacherSampler<'a> {
    pub teacher: &'a TeacherModel<f32>,
    pub config: SamplerConfig,
}

impl Generator for TeacherSampler<'_> {
    fn generate(&self, eps: &Tensor<f32>, cond: &Tensor<f32>) -> Result<Tensor<f32>, MetricError> {
        let field = TeacherField {
            teacher: self.teacher,
            cond: cond.clone(),
            guidance: self.config.guidance_scale,
        };
        Ok(ode_sample(&field, eps, &self.config)?.end)
    }
}

/// Starting noise for a sampling seed.
pub fn seed_noise(seed: u64, rows: usize, dim: usize) -> Tensor<f32> {
    let mut rng = rng_from_seed(derive_seed(seed, "sample-noise"));
    Tensor::new(rows, dim, normal_vec(&mut rng, rows * dim))
}

/// Un-dropped conditions for every observation in a dataset.
pub fn dataset_conditions(dataset: &ToyDataset) -> Tensor<f32> {
    let mut rng = rng_from_seed(0);
    encode_batch(&dataset.lr, dataset.lr_dim(), 0.0, &mut rng)
}

/// Samples for every condition of `dataset` from the noise of `seed`.
pub fn generate_for(gen: &dyn Generator, dataset: &ToyDataset, seed: u64) -> Result<Tensor<f32>, MetricError> {
    let eps = seed_noise(seed, dataset.len(), dataset.hr_dim());
    gen.generate(&eps, &dataset_conditions(dataset))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityReport {
    pub reference_seed: u64,
    /// Mean distance of every other seed's output to the reference output.
    pub mean_to_reference: f64,
    pub pairwise: Vec<Vec<f64>>,
}

/// Diversity of per-seed outputs, with the first entry as the reference.
pub fn seed_diversity(
    outputs: &[(u64, Vec<f64>)],
    distance: &dyn SampleDistance,
) -> Result<DiversityReport, MetricError> {
    if outputs.len() < 2 {
        return Err(MetricError::TooFewSeeds(outputs.len()));
    }
    let n = outputs.len();
    let mut pairwise = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = distance.distance(&outputs[i].1, &outputs[j].1);
            pairwise[i][j] = d;
            pairwise[j][i] = d;
        }
    }
    let mean_to_reference = pairwise[0][1..].iter().sum::<f64>() / (n - 1) as f64;
    Ok(DiversityReport {
        reference_seed: outputs[0].0,
        mean_to_reference,
        pairwise,
    })
}

/// Diversity of a generator's output for one fixed condition row across seeds.
pub fn generator_seed_diversity(
    gen: &dyn Generator,
    cond: &[f32],
    state_dim: usize,
    seeds: &[u64],
    distance: &dyn SampleDistance,
) -> Result<DiversityReport, MetricError> {
    let c = Tensor::new(1, cond.len(), cond.to_vec());
    let mut outputs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let out = gen.generate(&seed_noise(seed, 1, state_dim), &c)?;
        outputs.push((seed, out.to_f64_vec()));
    }
    seed_diversity(&outputs, distance)
}

/// Values of one metric, one per evaluation seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub values: Vec<(u64, f64)>,
}

impl MetricSeries {
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|v| v.1).sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation (zero for a single value).
    pub fn std(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.values.iter().map(|v| (v.1 - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// `std / |mean|`.
    pub fn relative_std(&self) -> f64 {
        self.std() / self.mean().abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub fingerprint: String,
    pub sample_count: usize,
    pub metrics: Vec<MetricSeries>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricSeries> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Evaluates `metrics(seed)` for each seed and collects named series.
pub fn stability<F>(seeds: &[u64], mut metrics: F) -> Result<Vec<MetricSeries>, MetricError>
where
    F: FnMut(u64) -> Result<Vec<(String, f64)>, MetricError>,
{
    if seeds.len() < 2 {
        return Err(MetricError::TooFewSeeds(seeds.len()));
    }
    let mut series: Vec<MetricSeries> = Vec::new();
    for &seed in seeds {
        for (name, value) in metrics(seed)? {
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.values.push((seed, value)),
                None => series.push(MetricSeries {
                    name,
                    values: vec![(seed, value)],
                }),
            }
        }
    }
    Ok(series)
}

/// Per-seed task metrics of a generator on an evaluation set.
///
/// Point tasks report `sw`. Patch tasks report `psnr`, `feature_distance`
/// and `gradient_sw` (sliced Wasserstein between gradient-magnitude histograms).
pub fn task_metrics(gen: &dyn Generator, eval: &ToyDataset, seed: u64) -> Result<Vec<(String, f64)>, MetricError> {
    let samples = generate_for(gen, eval, seed)?;
    let truth = eval.hr_tensor();
    match eval.patch_side() {
        None => Ok(vec![("sw".into(), sliced_wasserstein_default(&samples, &truth)?)]),
        Some(side) => {
            let psnr = mean_psnr(&samples, &truth, 1.0)?;
            let net = FeatureNet::<f32>::seeded(eval.hr_dim());
            let diff = net.features(&samples)?.zip_map(&net.features(&truth)?, |a, b| a - b);
            let feature = (0..diff.rows())
                .map(|i| diff.row(i).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / diff.rows() as f64;
            let grad_sw =
                sliced_wasserstein_default(&gradient_histograms(&samples, side), &gradient_histograms(&truth, side))?;
            Ok(vec![
                ("psnr".into(), psnr),
                ("feature_distance".into(), feature),
                ("gradient_sw".into(), grad_sw),
            ])
        }
    }
}

/// Seed-stability protocol: every metric re-evaluated under each sampling seed.
pub fn metric_stability(
    gen: &dyn Generator,
    eval: &ToyDataset,
    seeds: &[u64],
    fingerprint: &str,
) -> Result<MetricReport, MetricError> {
    let metrics = stability(seeds, |seed| task_metrics(gen, eval, seed))?;
    Ok(MetricReport {
        fingerprint: fingerprint.to_string(),
        sample_count: eval.len(),
        metrics,
    })
}

/// Seeds `1..=n`, so seed 1 is the diversity reference.
pub fn default_seeds(n: usize) -> Vec<u64> {
    (1..=n as u64).collect()
}
