use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{boundary_loss, isc_loss, IntervalSampler};
use super::student::StudentModel;
use super::IscError;
use crate::data::{encode_batch, ToyDataset};
use crate::flow::{interpolate_batch, TeacherModel};
use crate::nn::{AdamW, AdamWConfig, Tape, Tensor};
use crate::registry::Registry;
use crate::rng::{derive_seed, normal_vec, uniform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Split,
    Boundary,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Split => "split",
            Branch::Boundary => "boundary",
        })
    }
}

/// Maps the per-step draw `q ~ U(0,1)` and the branch probability `p` to a branch.
pub trait BranchRule: Send + Sync {
    fn choose(&self, q: f64, p: f64) -> Branch;
    fn describe(&self) -> &'static str;
}

/// `q < p` selects the splitting branch, as in the training pseudocode.
pub struct AlgorithmRule;

impl BranchRule for AlgorithmRule {
    fn choose(&self, q: f64, p: f64) -> Branch {
        if q < p {
            Branch::Split
        } else {
            Branch::Boundary
        }
    }
    fn describe(&self) -> &'static str {
        "q < p selects interval splitting; p is the splitting probability"
    }
}

/// `q < p` selects the boundary branch, as in the hyperparameter description.
pub struct ProseRule;

impl BranchRule for ProseRule {
    fn choose(&self, q: f64, p: f64) -> Branch {
        if q < p {
            Branch::Boundary
        } else {
            Branch::Split
        }
    }
    fn describe(&self) -> &'static str {
        "q < p selects boundary matching; p is the boundary probability"
    }
}

pub fn branch_rule_registry() -> Registry<dyn BranchRule> {
    let mut reg: Registry<dyn BranchRule> = Registry::new("branch rule");
    reg.register("algorithm", Arc::new(AlgorithmRule))
        .register("prose", Arc::new(ProseRule));
    reg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub iterations: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    #[serde(default = "default_p")]
    pub branch_probability: f64,
    #[serde(default = "default_rule")]
    pub branch_rule: String,
    /// CFG scale for the boundary target; `None` disables guidance.
    #[serde(default)]
    pub guidance_scale: Option<f64>,
    #[serde(default)]
    pub intervals: IntervalSampler,
    #[serde(default)]
    pub condition_dropout: f64,
}

fn default_p() -> f64 {
    0.6
}

fn default_rule() -> String {
    "algorithm".into()
}

impl Stage1Config {
    pub fn new(iterations: u64, batch_size: usize, optimizer: AdamWConfig) -> Self {
        Stage1Config {
            iterations,
            batch_size,
            optimizer,
            branch_probability: default_p(),
            branch_rule: default_rule(),
            guidance_scale: None,
            intervals: IntervalSampler::default(),
            condition_dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), IscError> {
        if !(0.0..=1.0).contains(&self.branch_probability) {
            return Err(IscError::InvalidProbability(self.branch_probability));
        }
        if !(0.0..=1.0).contains(&self.intervals.full_interval_prob) {
            return Err(IscError::InvalidProbability(self.intervals.full_interval_prob));
        }
        if !(0.0..=1.0).contains(&self.condition_dropout) {
            return Err(IscError::InvalidProbability(self.condition_dropout));
        }
        branch_rule_registry().get(&self.branch_rule)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Record {
    pub iteration: u64,
    pub branch: Branch,
    pub loss: f64,
}

/// One stage-1 update on a batch of clean samples and observations.
///
/// Draws `q`, picks the branch, builds `z_t` from the data pair and takes one
/// optimizer step on the chosen loss.
#[allow(clippy::too_many_arguments)]
pub fn stage1_train_step(
    student: &mut StudentModel<f32>,
    opt: &mut AdamW<f32>,
    teacher: &TeacherModel<f32>,
    rule: &dyn BranchRule,
    x: &Tensor<f32>,
    cond: &Tensor<f32>,
    config: &Stage1Config,
    iteration: u64,
    rng: &mut impl Rng,
) -> Result<Stage1Record, IscError> {
    let branch = rule.choose(uniform(rng), config.branch_probability);
    let (b, dim) = x.shape();
    let eps = Tensor::new(b, dim, normal_vec(rng, b * dim));

    let tape = Tape::new();
    let bound = student.bind(&tape);
    let loss = match branch {
        Branch::Split => {
            let intervals: Vec<_> = (0..b).map(|_| config.intervals.sample(rng)).collect();
            let t: Vec<f64> = intervals.iter().map(|i| i.t).collect();
            let z_t = interpolate_batch(x, &eps, &t).expect("sampled times lie in [0, 1]");
            isc_loss(&bound, &z_t, &intervals, cond)?
        }
        Branch::Boundary => {
            let t: Vec<f64> = (0..b).map(|_| uniform(rng)).collect();
            let z_t = interpolate_batch(x, &eps, &t).expect("sampled times lie in [0, 1]");
            boundary_loss(&bound, teacher, &z_t, &t, cond, config.guidance_scale)?
        }
    };
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(IscError::Divergence { iteration, branch });
    }
    let grads = tape.backward(loss)?;
    student.params.accumulate(&grads, &bound.vars);
    opt.step(&mut student.params)?;
    Ok(Stage1Record {
        iteration,
        branch,
        loss: value,
    })
}

/// Stage-1 distillation from a student initialized as a copy of the teacher.
pub fn train_student(
    teacher: &TeacherModel<f32>,
    dataset: &ToyDataset,
    config: &Stage1Config,
    seed: u64,
) -> Result<(StudentModel<f32>, Vec<Stage1Record>), IscError> {
    let mut student = StudentModel::init_from_teacher(teacher);
    let records = continue_student(&mut student, teacher, dataset, config, seed)?;
    Ok((student, records))
}

pub fn continue_student(
    student: &mut StudentModel<f32>,
    teacher: &TeacherModel<f32>,
    dataset: &ToyDataset,
    config: &Stage1Config,
    seed: u64,
) -> Result<Vec<Stage1Record>, IscError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(IscError::EmptyDataset);
    }
    let rule = branch_rule_registry().get(&config.branch_rule)?;
    let mut rng = crate::rng::rng_from_seed(derive_seed(seed, "stage1-train"));
    let mut opt = AdamW::new(config.optimizer, &student.params);
    let (n, obs) = (dataset.len(), dataset.lr_dim());
    let mut records = Vec::with_capacity(config.iterations as usize);
    for iteration in 0..config.iterations {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..n)).collect();
        let (x, lr) = dataset.batch(&idx);
        let cond = encode_batch(lr.data(), obs, config.condition_dropout, &mut rng);
        records.push(stage1_train_step(
            student,
            &mut opt,
            teacher,
            rule.as_ref(),
            &x,
            &cond,
            config,
            iteration,
            &mut rng,
        )?);
    }
    Ok(records)
}

/// Fraction of steps that took the splitting branch.
pub fn split_fraction(records: &[Stage1Record]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.branch == Branch::Split).count() as f64 / records.len() as f64
}

/// Branch sequence a rule produces for `steps` draws, without any training.
pub fn simulate_branches(rule: &dyn BranchRule, p: f64, steps: usize, rng: &mut impl Rng) -> Vec<Branch> {
    (0..steps).map(|_| rule.choose(uniform(rng), p)).collect()
}
