//! Stage orchestration: teacher → distill → refine → eval.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::checkpoint::{
    load_checkpoint_expecting, save_checkpoint, CheckpointMeta, CheckpointModel, ModelArch, ModelKind,
};
use super::config::{ExperimentConfig, Stage};
use super::report::{emit_report, loss_plot_svg, MetricRow};
use super::{io_err, HarnessError};
use crate::data::{generate_dataset, ToyDataset};
use crate::flow::{train_teacher, TeacherModel};
use crate::isc::{train_student, StudentModel};
use crate::metrics::{
    dataset_conditions, distance_registry, generator_seed_diversity, stability, task_metrics, Generator, MetricSeries,
    StudentSampler, TeacherSampler,
};
use crate::nn::Tensor;
use crate::refine::{refine_student, Discriminator};
use crate::rng::{derive_index_seed, derive_seed};

pub const TEACHER_CKPT: &str = "teacher.smf";
pub const STAGE1_CKPT: &str = "student_stage1.smf";
pub const REFINED_CKPT: &str = "student_refined.smf";
pub const REGULARIZER_CKPT: &str = "regularizer.smf";
pub const DISCRIMINATOR_CKPT: &str = "discriminator.smf";
pub const METRICS_CSV: &str = "metrics.csv";
const MANIFEST: &str = "manifest.toml";

/// Files a stage writes (SVG plots excluded).
pub fn stage_outputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Teacher => &[TEACHER_CKPT, "teacher_loss.csv"],
        Stage::Distill => &[STAGE1_CKPT, "stage1_loss.csv"],
        Stage::Refine => &[REFINED_CKPT, REGULARIZER_CKPT, DISCRIMINATOR_CKPT, "stage2_loss.csv"],
        Stage::Eval => &[METRICS_CSV],
    }
}

pub fn artifact_path(config: &ExperimentConfig, name: &str) -> PathBuf {
    config.output_dir.join(name)
}

pub fn train_dataset(config: &ExperimentConfig) -> Result<ToyDataset, HarnessError> {
    let d = &config.dataset;
    Ok(generate_dataset(
        &d.name,
        d.train_size,
        derive_seed(config.seed, "train-data"),
        d.degradation,
    )?)
}

pub fn eval_dataset(config: &ExperimentConfig) -> Result<ToyDataset, HarnessError> {
    let d = &config.dataset;
    Ok(generate_dataset(
        &d.name,
        d.eval_size,
        derive_seed(config.seed, "eval-data"),
        d.degradation,
    )?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Rerun stages whose outputs already exist.
    pub force: bool,
    /// Validate and plan only; nothing is read from or written to disk.
    pub dry_run: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Outputs were already present for this config.
    Skipped,
    /// Dry run: the stage would run.
    Planned,
    /// Dry run: the stage would fail for lack of the named prior stage's output.
    Blocked(&'static str),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineSummary {
    pub stages: Vec<(Stage, StageOutcome)>,
    pub written: Vec<PathBuf>,
}

type Manifest = BTreeMap<String, String>;

fn read_manifest(dir: &Path) -> Result<Manifest, HarnessError> {
    let path = dir.join(MANIFEST);
    match std::fs::read_to_string(&path) {
        Ok(text) => toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::new()),
        Err(e) => Err(io_err(&path)(e)),
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), HarnessError> {
    let path = dir.join(MANIFEST);
    std::fs::write(&path, toml::to_string(manifest).expect("string map")).map_err(io_err(&path))
}

fn producer(name: &str) -> Stage {
    Stage::ALL
        .into_iter()
        .find(|s| stage_outputs(*s).contains(&name))
        .expect("known artifact")
}

/// Loads a checkpoint written by an earlier stage and checks that it was
/// produced under the current config.
pub fn load_stage_checkpoint<M: CheckpointModel>(
    config: &ExperimentConfig,
    name: &str,
    arch: &ModelArch,
) -> Result<(M, CheckpointMeta), HarnessError> {
    let stage = producer(name);
    let path = artifact_path(config, name);
    if !path.exists() {
        return Err(HarnessError::MissingInput {
            stage: stage.name(),
            path,
        });
    }
    let (model, meta) = load_checkpoint_expecting::<M>(&path, arch)?;
    if meta.fingerprint != config.stage_fingerprint(stage) {
        return Err(HarnessError::Stale {
            stage: stage.name(),
            path,
        });
    }
    Ok((model, meta))
}

fn check_input(config: &ExperimentConfig, name: &str, planned: &[Stage]) -> Result<(), HarnessError> {
    let stage = producer(name);
    if planned.contains(&stage) || artifact_path(config, name).exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingInput {
            stage: stage.name(),
            path: artifact_path(config, name),
        })
    }
}

fn inputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Teacher => &[],
        Stage::Distill => &[TEACHER_CKPT],
        Stage::Refine | Stage::Eval => &[TEACHER_CKPT, STAGE1_CKPT],
    }
}

/// Runs the requested stages in pipeline order.
///
/// A stage is skipped when all of its outputs exist and the manifest records
/// the current stage fingerprint; outputs from a different config are an
/// error unless `force` is set.
pub fn run_pipeline(
    config: &ExperimentConfig,
    stages: &[Stage],
    options: PipelineOptions,
) -> Result<PipelineSummary, HarnessError> {
    config.validate()?;
    let mut order: Vec<Stage> = stages.to_vec();
    order.sort();
    order.dedup();
    let mut summary = PipelineSummary::default();
    if order.is_empty() {
        return Ok(summary);
    }

    let dir = &config.output_dir;
    let mut manifest = if dir.exists() {
        read_manifest(dir)?
    } else {
        Manifest::new()
    };
    let mut done: Vec<Stage> = Vec::new();
    for &stage in &order {
        if let Err(e) = inputs(stage)
            .iter()
            .try_for_each(|name| check_input(config, name, &done))
        {
            match e {
                HarnessError::MissingInput { stage: prior, .. } if options.dry_run => {
                    summary.stages.push((stage, StageOutcome::Blocked(prior)));
                    continue;
                }
                e => return Err(e),
            }
        }
        let fp = recorded_fingerprint(config, stage, &done);
        let outputs = stage_outputs(stage);
        let present = outputs.iter().filter(|n| artifact_path(config, n).exists()).count();
        let recorded = manifest.get(stage.name()).map(String::as_str);
        if !options.force && present > 0 {
            if recorded != Some(fp.as_str()) {
                let first = outputs
                    .iter()
                    .find(|n| artifact_path(config, n).exists())
                    .expect("present");
                return Err(HarnessError::Stale {
                    stage: stage.name(),
                    path: artifact_path(config, first),
                });
            }
            if present == outputs.len() {
                summary.stages.push((stage, StageOutcome::Skipped));
                done.push(stage);
                continue;
            }
        }
        if options.dry_run {
            summary.stages.push((stage, StageOutcome::Planned));
            done.push(stage);
            continue;
        }
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        // An interrupted run must not leave a manifest entry that vouches for partial outputs.
        if manifest.remove(stage.name()).is_some() {
            write_manifest(dir, &manifest)?;
        }
        let written = match stage {
            Stage::Teacher => run_teacher(config)?,
            Stage::Distill => run_distill(config)?,
            Stage::Refine => run_refine(config)?,
            Stage::Eval => run_eval(config)?,
        };
        manifest.insert(stage.name().into(), fp);
        write_manifest(dir, &manifest)?;
        summary.written.extend(written);
        summary.stages.push((stage, StageOutcome::Ran));
        done.push(stage);
    }
    Ok(summary)
}

/// The eval report also depends on whether a refined student exists.
fn recorded_fingerprint(config: &ExperimentConfig, stage: Stage, done: &[Stage]) -> String {
    let fp = config.stage_fingerprint(stage);
    if stage == Stage::Eval && (done.contains(&Stage::Refine) || artifact_path(config, REFINED_CKPT).exists()) {
        format!("{fp}+refined")
    } else {
        fp
    }
}

fn meta(config: &ExperimentConfig, kind: ModelKind, stage: Stage, iteration: u64) -> CheckpointMeta {
    CheckpointMeta {
        kind,
        iteration,
        fingerprint: config.stage_fingerprint(stage),
    }
}

fn stage_seed(config: &ExperimentConfig, stage: Stage) -> u64 {
    derive_seed(config.seed, stage.name())
}

fn save<M: CheckpointModel>(
    config: &ExperimentConfig,
    model: &M,
    meta: CheckpointMeta,
    name: &str,
    written: &mut Vec<PathBuf>,
) -> Result<(), HarnessError> {
    let path = artifact_path(config, name);
    save_checkpoint(model, &meta, &path)?;
    written.push(path);
    Ok(())
}

fn plot(
    config: &ExperimentConfig,
    name: &str,
    title: &str,
    series: &[(&str, Vec<(f64, f64)>)],
    written: &mut Vec<PathBuf>,
) -> Result<(), HarnessError> {
    if config.plots {
        let path = artifact_path(config, name);
        std::fs::write(&path, loss_plot_svg(title, series)).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(())
}

fn run_teacher(config: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let data = train_dataset(config)?;
    let (teacher, records) = train_teacher(
        &data,
        config.velocity_arch()?,
        &config.teacher,
        stage_seed(config, Stage::Teacher),
    )?;
    let mut written = Vec::new();
    let m = meta(config, ModelKind::Teacher, Stage::Teacher, config.teacher.iterations);
    save(config, &teacher, m, TEACHER_CKPT, &mut written)?;
    let csv = artifact_path(config, "teacher_loss.csv");
    emit_report(&records, &csv)?;
    written.push(csv);
    let curve = records.iter().map(|r| (r.iteration as f64, r.loss)).collect();
    plot(
        config,
        "teacher_loss.svg",
        "teacher flow-matching loss",
        &[("loss", curve)],
        &mut written,
    )?;
    Ok(written)
}

fn load_teacher(config: &ExperimentConfig) -> Result<TeacherModel<f32>, HarnessError> {
    let arch = ModelArch::Velocity(config.velocity_arch()?);
    Ok(load_stage_checkpoint(config, TEACHER_CKPT, &arch)?.0)
}

fn load_student(config: &ExperimentConfig, name: &str) -> Result<StudentModel<f32>, HarnessError> {
    let arch = ModelArch::Velocity(config.velocity_arch()?);
    Ok(load_stage_checkpoint(config, name, &arch)?.0)
}

fn run_distill(config: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let teacher = load_teacher(config)?;
    let data = train_dataset(config)?;
    let (student, records) = train_student(&teacher, &data, &config.stage1, stage_seed(config, Stage::Distill))?;
    let mut written = Vec::new();
    let m = meta(config, ModelKind::Student, Stage::Distill, config.stage1.iterations);
    save(config, &student, m, STAGE1_CKPT, &mut written)?;
    let csv = artifact_path(config, "stage1_loss.csv");
    emit_report(&records, &csv)?;
    written.push(csv);
    let curve = records.iter().map(|r| (r.iteration as f64, r.loss)).collect();
    plot(
        config,
        "stage1_loss.svg",
        "stage-1 loss",
        &[("loss", curve)],
        &mut written,
    )?;
    Ok(written)
}

fn run_refine(config: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let teacher = load_teacher(config)?;
    let student = load_student(config, STAGE1_CKPT)?;
    let data = train_dataset(config)?;
    let (models, records) = refine_student(
        student,
        &teacher,
        &data,
        &config.stage2,
        stage_seed(config, Stage::Refine),
    )?;
    let mut written = Vec::new();
    let it = config.stage2.iterations;
    save(
        config,
        &models.student,
        meta(config, ModelKind::Student, Stage::Refine, config.stage1.iterations + it),
        REFINED_CKPT,
        &mut written,
    )?;
    save(
        config,
        &models.regularizer,
        meta(config, ModelKind::Regularizer, Stage::Refine, it),
        REGULARIZER_CKPT,
        &mut written,
    )?;
    save(
        config,
        &models.discriminator,
        meta(config, ModelKind::Discriminator, Stage::Refine, it),
        DISCRIMINATOR_CKPT,
        &mut written,
    )?;
    let csv = artifact_path(config, "stage2_loss.csv");
    emit_report(&records, &csv)?;
    written.push(csv);
    let curve =
        |f: fn(&crate::refine::Stage2Record) -> f64| records.iter().map(|r| (r.iteration as f64, f(r))).collect();
    plot(
        config,
        "stage2_loss.svg",
        "stage-2 losses",
        &[
            ("isc", curve(|r| r.isc)),
            ("reconstruction", curve(|r| r.reconstruction)),
            ("generator", curve(|r| r.generator)),
            ("regularizer", curve(|r| r.regularizer)),
            ("discriminator", curve(|r| r.discriminator)),
        ],
        &mut written,
    )?;
    Ok(written)
}

fn push_series(rows: &mut Vec<MetricRow>, name: &str, series: &MetricSeries, labels: &BTreeMap<u64, u64>) {
    for &(seed, value) in &series.values {
        rows.push(MetricRow {
            metric: name.into(),
            seed: labels.get(&seed).copied().unwrap_or(seed).to_string(),
            value,
        });
    }
    rows.push(MetricRow {
        metric: name.into(),
        seed: "mean".into(),
        value: series.mean(),
    });
    rows.push(MetricRow {
        metric: name.into(),
        seed: "std".into(),
        value: series.std(),
    });
}

/// Every metric under every sampling seed, for the teacher, the stage-1
/// student at each configured step count, and the refined student if present.
fn run_eval(config: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let teacher = load_teacher(config)?;
    let stage1 = load_student(config, STAGE1_CKPT)?;
    let refined = if artifact_path(config, REFINED_CKPT).exists() {
        Some(load_student(config, REFINED_CKPT)?)
    } else {
        None
    };
    let eval = eval_dataset(config)?;
    let eval_seed = stage_seed(config, Stage::Eval);
    // Report labels are 1..=n; the noise seeds are derived from the eval stage seed.
    let labels: BTreeMap<u64, u64> = (1..=config.eval.seeds as u64)
        .map(|i| (derive_index_seed(eval_seed, i), i))
        .collect();
    let seeds: Vec<u64> = (1..=config.eval.seeds as u64)
        .map(|i| derive_index_seed(eval_seed, i))
        .collect();

    let mut gens: Vec<(String, Box<dyn Generator + '_>)> = vec![(
        "teacher".into(),
        Box::new(TeacherSampler {
            teacher: &teacher,
            config: config.sampler.clone(),
        }),
    )];
    for &k in &config.eval.student_steps {
        gens.push((
            format!("student_k{k}"),
            Box::new(StudentSampler {
                student: &stage1,
                steps: k,
            }),
        ));
    }
    if let Some(r) = &refined {
        for &k in &config.eval.student_steps {
            gens.push((
                format!("refined_k{k}"),
                Box::new(StudentSampler { student: r, steps: k }),
            ));
        }
    }

    let distance = distance_registry(eval.hr_dim()).get(&config.eval.distance)?;
    let conds = dataset_conditions(&eval);
    let cond = conds.row(config.eval.diversity_index);
    let mut rows = Vec::new();
    for (name, gen) in &gens {
        for series in stability(&seeds, |s| task_metrics(gen.as_ref(), &eval, s))? {
            push_series(&mut rows, &format!("{name}.{}", series.name), &series, &labels);
        }
        let div = generator_seed_diversity(gen.as_ref(), cond, eval.hr_dim(), &seeds, distance.as_ref())?;
        let series = MetricSeries {
            name: "diversity".into(),
            values: seeds[1..]
                .iter()
                .enumerate()
                .map(|(j, &s)| (s, div.pairwise[0][j + 1]))
                .collect(),
        };
        push_series(&mut rows, &format!("{name}.diversity"), &series, &labels);
    }
    let path = artifact_path(config, METRICS_CSV);
    emit_report(&rows, &path)?;
    Ok(vec![path])
}

/// Which trained model `sample` draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSource {
    Teacher,
    Stage1,
    Refined,
}

impl SampleSource {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "teacher" => Ok(SampleSource::Teacher),
            "stage1" => Ok(SampleSource::Stage1),
            "refined" => Ok(SampleSource::Refined),
            _ => Err(HarnessError::Config(format!(
                "unknown sample source '{s}' (known: teacher, stage1, refined)"
            ))),
        }
    }
}

/// One sample per evaluation-set condition, from the noise of `seed`.
/// `steps` is the student jump count (ignored for the teacher, which uses the sampler config).
pub fn sample_checkpoint(
    config: &ExperimentConfig,
    source: SampleSource,
    steps: usize,
    seed: u64,
) -> Result<Tensor<f32>, HarnessError> {
    let eval = eval_dataset(config)?;
    let samples = match source {
        SampleSource::Teacher => {
            let teacher = load_teacher(config)?;
            crate::metrics::generate_for(
                &TeacherSampler {
                    teacher: &teacher,
                    config: config.sampler.clone(),
                },
                &eval,
                seed,
            )?
        }
        SampleSource::Stage1 | SampleSource::Refined => {
            let name = if source == SampleSource::Stage1 {
                STAGE1_CKPT
            } else {
                REFINED_CKPT
            };
            let student = load_student(config, name)?;
            crate::metrics::generate_for(
                &StudentSampler {
                    student: &student,
                    steps,
                },
                &eval,
                seed,
            )?
        }
    };
    Ok(samples)
}

/// Discriminator checkpoint of the refine stage.
pub fn load_discriminator(config: &ExperimentConfig) -> Result<Discriminator<f32>, HarnessError> {
    let data = eval_dataset(config)?;
    let arch = ModelArch::Disc(config.stage2.disc_arch(&data));
    Ok(load_stage_checkpoint(config, DISCRIMINATOR_CKPT, &arch)?.0)
}
