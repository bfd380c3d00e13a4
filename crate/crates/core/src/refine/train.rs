use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    gan_discriminator_loss, gan_generator_loss, reconstruction_loss, regularizer_loss, schedule_registry, vsd_gradient,
    LossWeights, VsdConfig, WeightSchedule,
};
use super::models::{init_regularizer, DiscArch, Discriminator};
use super::RefineError;
use crate::data::{encode_batch, ToyDataset};
use crate::flow::{interpolate_batch, TeacherModel};
use crate::isc::{isc_loss, IntervalSampler, StudentModel};
use crate::metrics::FeatureNet;
use crate::nn::{AdamW, AdamWConfig, Tape, Tensor};
use crate::rng::{derive_seed, normal_vec, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub iterations: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub weights: LossWeights,
    pub student_optimizer: AdamWConfig,
    pub regularizer_optimizer: AdamWConfig,
    pub discriminator_optimizer: AdamWConfig,
    pub discriminator_hidden: Vec<usize>,
    #[serde(default = "default_schedule")]
    pub schedule: String,
    /// `(t, ω)` knots for the `table` schedule.
    #[serde(default)]
    pub schedule_table: Vec<(f64, f64)>,
    #[serde(default)]
    pub vsd: VsdConfig,
    #[serde(default)]
    pub intervals: IntervalSampler,
    /// Regularizer and discriminator updates per student update.
    #[serde(default = "one")]
    pub regularizer_updates: usize,
    #[serde(default = "one")]
    pub discriminator_updates: usize,
}

fn default_schedule() -> String {
    "constant-1".into()
}

fn one() -> usize {
    1
}

impl Stage2Config {
    pub fn new(iterations: u64, batch_size: usize, lr: f64) -> Self {
        Stage2Config {
            iterations,
            batch_size,
            weights: LossWeights::default(),
            student_optimizer: AdamWConfig::with_lr(lr),
            regularizer_optimizer: AdamWConfig::with_lr(lr),
            discriminator_optimizer: AdamWConfig::with_lr(lr),
            discriminator_hidden: vec![64, 64],
            schedule: default_schedule(),
            schedule_table: Vec::new(),
            vsd: VsdConfig::default(),
            intervals: IntervalSampler::default(),
            regularizer_updates: 1,
            discriminator_updates: 1,
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        self.weights.validate()?;
        let v = &self.vsd;
        if !(0.0 <= v.t_min && v.t_min <= v.t_max && v.t_max <= 1.0) {
            return Err(RefineError::InvalidTimeRange(v.t_min, v.t_max));
        }
        schedule_registry(&self.schedule_table)?.get(&self.schedule)?;
        Ok(())
    }

    pub fn disc_arch(&self, dataset: &ToyDataset) -> DiscArch {
        DiscArch {
            input_dim: dataset.hr_dim(),
            patch_side: dataset.patch_side(),
            hidden: self.discriminator_hidden.clone(),
        }
    }
}

/// Trainable state of stage 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Models {
    pub student: StudentModel<f32>,
    pub regularizer: TeacherModel<f32>,
    pub discriminator: Discriminator<f32>,
}

impl Stage2Models {
    /// Regularizer copied from the teacher; discriminator drawn from `seed`.
    pub fn init(student: StudentModel<f32>, teacher: &TeacherModel<f32>, arch: DiscArch, seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, "discriminator-init"));
        Stage2Models {
            student,
            regularizer: init_regularizer(teacher),
            discriminator: Discriminator::new(arch, &mut rng),
        }
    }
}

/// One optimizer per trainable model.
pub struct Stage2Optimizers {
    pub student: AdamW<f32>,
    pub regularizer: AdamW<f32>,
    pub discriminator: AdamW<f32>,
}

impl Stage2Optimizers {
    pub fn new(models: &Stage2Models, config: &Stage2Config) -> Self {
        Stage2Optimizers {
            student: AdamW::new(config.student_optimizer, &models.student.params),
            regularizer: AdamW::new(config.regularizer_optimizer, &models.regularizer.params),
            discriminator: AdamW::new(config.discriminator_optimizer, &models.discriminator.params),
        }
    }
}

/// Component values of one stage-2 step.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Record {
    pub iteration: u64,
    pub isc: f64,
    pub reconstruction: f64,
    /// Norm of the injected distillation gradient.
    pub vsd_grad_norm: f64,
    pub generator: f64,
    /// `λ1·isc + λ2·rec + λ4·gen` (the distillation term has no scalar value).
    pub total: f64,
    pub regularizer: f64,
    pub discriminator: f64,
}

/// A training batch: clean samples and their encoded conditions.
pub struct Stage2Batch<'a> {
    pub x: &'a Tensor<f32>,
    pub cond: &'a Tensor<f32>,
}

fn check(component: &'static str, value: f64, iteration: u64) -> Result<f64, RefineError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(RefineError::NonFinite { component, iteration })
    }
}

/// Student gradients of the weighted objective, accumulated into
/// `student.params` without an optimizer step. Returns the component
/// values and the detached one-step samples.
#[allow(clippy::too_many_arguments)]
pub fn student_gradients(
    models: &mut Stage2Models,
    teacher: &TeacherModel<f32>,
    batch: &Stage2Batch<'_>,
    config: &Stage2Config,
    schedule: &dyn WeightSchedule,
    feature_net: &FeatureNet<f32>,
    iteration: u64,
    rng: &mut impl Rng,
) -> Result<(Stage2Record, Tensor<f32>), RefineError> {
    let w = config.weights;
    let (b, d) = batch.x.shape();
    let student = &mut models.student;

    let tape = Tape::new();
    let bound = student.bind(&tape);
    let disc = models.discriminator.bind_frozen(&tape);
    let cond = tape.constant(batch.cond.clone());

    // One-step samples from fresh noise, kept in the graph.
    let eps = tape.constant(Tensor::new(b, d, normal_vec(rng, b * d)));
    let u = bound.average_velocity(eps, &vec![0.0; b], &vec![1.0; b], cond)?;
    let z_hat = eps - u;
    let z_hat_value = z_hat.value();

    let isc = {
        let eps_isc = Tensor::new(b, d, normal_vec(rng, b * d));
        let intervals: Vec<_> = (0..b).map(|_| config.intervals.sample(rng)).collect();
        let t: Vec<f64> = intervals.iter().map(|i| i.t).collect();
        let z_t = interpolate_batch(batch.x, &eps_isc, &t).expect("times in [0, 1]");
        isc_loss(&bound, &z_t, &intervals, batch.cond)?
    };
    let rec = reconstruction_loss(z_hat, batch.x, feature_net)?;
    let gen = gan_generator_loss(&disc, z_hat)?;
    let g = vsd_gradient(
        &z_hat_value,
        teacher,
        &models.regularizer,
        batch.cond,
        schedule,
        &config.vsd,
        rng,
    )?;

    let (isc_v, rec_v, gen_v) = (
        isc.value().item() as f64,
        rec.value().item() as f64,
        gen.value().item() as f64,
    );
    check("isc", isc_v, iteration)?;
    check("reconstruction", rec_v, iteration)?;
    check("generator", gen_v, iteration)?;
    let vsd_norm = check("vsd", g.sum_sq().sqrt() as f64, iteration)?;

    let f = |k: f64| k as f32;
    let total = isc.scale(f(w.isc)) + rec.scale(f(w.reconstruction)) + gen.scale(f(w.adversarial));
    let total_v = total.value().item() as f64;
    let grads = tape.backward_seeded(&[(total, Tensor::scalar(1.0)), (z_hat, g.scaled(f(w.vsd)))])?;
    student.params.accumulate(&grads, &bound.vars);

    Ok((
        Stage2Record {
            iteration,
            isc: isc_v,
            reconstruction: rec_v,
            vsd_grad_norm: vsd_norm,
            generator: gen_v,
            total: total_v,
            regularizer: 0.0,
            discriminator: 0.0,
        },
        z_hat_value,
    ))
}

/// One alternating update: student, then regularizer, then discriminator.
#[allow(clippy::too_many_arguments)]
pub fn stage2_train_step(
    models: &mut Stage2Models,
    opts: &mut Stage2Optimizers,
    teacher: &TeacherModel<f32>,
    batch: &Stage2Batch<'_>,
    config: &Stage2Config,
    schedule: &dyn WeightSchedule,
    feature_net: &FeatureNet<f32>,
    iteration: u64,
    rng: &mut impl Rng,
) -> Result<Stage2Record, RefineError> {
    let (mut record, z_hat) = student_gradients(models, teacher, batch, config, schedule, feature_net, iteration, rng)?;
    opts.student.step(&mut models.student.params)?;

    for _ in 0..config.regularizer_updates {
        let tape = Tape::new();
        let bound = models.regularizer.bind(&tape);
        let loss = regularizer_loss(&bound, &z_hat, tape.constant(batch.cond.clone()), rng)?;
        record.regularizer = check("regularizer", loss.value().item() as f64, iteration)?;
        let grads = tape.backward(loss)?;
        models.regularizer.params.accumulate(&grads, &bound.vars);
        opts.regularizer.step(&mut models.regularizer.params)?;
    }

    for _ in 0..config.discriminator_updates {
        let tape = Tape::new();
        let bound = models.discriminator.bind(&tape);
        let loss = gan_discriminator_loss(&bound, tape.constant(batch.x.clone()), tape.constant(z_hat.clone()))?;
        record.discriminator = check("discriminator", loss.value().item() as f64, iteration)?;
        let grads = tape.backward(loss)?;
        models.discriminator.params.accumulate(&grads, &bound.vars);
        opts.discriminator.step(&mut models.discriminator.params)?;
    }
    Ok(record)
}

/// Stage-2 refinement of a stage-1 student.
pub fn refine_student(
    student: StudentModel<f32>,
    teacher: &TeacherModel<f32>,
    dataset: &ToyDataset,
    config: &Stage2Config,
    seed: u64,
) -> Result<(Stage2Models, Vec<Stage2Record>), RefineError> {
    let mut models = Stage2Models::init(student, teacher, config.disc_arch(dataset), seed);
    let records = continue_refine(&mut models, teacher, dataset, config, seed)?;
    Ok((models, records))
}

pub fn continue_refine(
    models: &mut Stage2Models,
    teacher: &TeacherModel<f32>,
    dataset: &ToyDataset,
    config: &Stage2Config,
    seed: u64,
) -> Result<Vec<Stage2Record>, RefineError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(RefineError::EmptyDataset);
    }
    let schedule = schedule_registry(&config.schedule_table)?.get(&config.schedule)?;
    let feature_net = FeatureNet::seeded(dataset.hr_dim());
    let mut opts = Stage2Optimizers::new(models, config);
    let mut rng = rng_from_seed(derive_seed(seed, "stage2-train"));
    let (n, obs) = (dataset.len(), dataset.lr_dim());
    let mut records = Vec::with_capacity(config.iterations as usize);
    for iteration in 0..config.iterations {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..n)).collect();
        let (x, lr) = dataset.batch(&idx);
        let cond = encode_batch(lr.data(), obs, 0.0, &mut rng);
        let batch = Stage2Batch { x: &x, cond: &cond };
        records.push(stage2_train_step(
            models,
            &mut opts,
            teacher,
            &batch,
            config,
            schedule.as_ref(),
            &feature_net,
            iteration,
            &mut rng,
        )?);
    }
    Ok(records)
}
