use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::data::{condition_dim, dataset_registry, DegradationParams};
use crate::flow::{integrator_registry, SamplerConfig, TeacherTrainConfig, VelocityArch};
use crate::isc::Stage1Config;
use crate::metrics::distance_registry;
use crate::refine::Stage2Config;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    pub train_size: usize,
    pub eval_size: usize,
    #[serde(default)]
    pub degradation: DegradationParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_steps")]
    pub student_steps: Vec<usize>,
    #[serde(default = "default_distance")]
    pub distance: String,
    /// Row of the evaluation set whose condition is used for seed diversity.
    #[serde(default)]
    pub diversity_index: usize,
}

fn default_seeds() -> usize {
    20
}

fn default_steps() -> Vec<usize> {
    vec![1, 4]
}

fn default_distance() -> String {
    "euclidean".into()
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seeds: default_seeds(),
            student_steps: default_steps(),
            distance: default_distance(),
            diversity_index: 0,
        }
    }
}

/// Everything a pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Also write SVG loss curves.
    #[serde(default)]
    pub plots: bool,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub teacher: TeacherTrainConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Teacher,
    Distill,
    Refine,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Teacher, Stage::Distill, Stage::Refine, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Distill => "distill",
            Stage::Refine => "refine",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(name: &str) -> Result<Stage, HarnessError> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| HarnessError::Config(format!("unknown stage '{name}'")))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Canonical serialization; the fingerprint is computed over it.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Fingerprint of the settings that determine a stage's outputs: the
    /// seed, data and model, plus every stage up to and including `stage`.
    pub fn stage_fingerprint(&self, stage: Stage) -> String {
        #[derive(Serialize)]
        struct Scope<'a> {
            seed: u64,
            dataset: &'a DatasetSection,
            model: &'a ModelSection,
            teacher: &'a TeacherTrainConfig,
            #[serde(skip_serializing_if = "Option::is_none")]
            stage1: Option<&'a Stage1Config>,
            #[serde(skip_serializing_if = "Option::is_none")]
            stage2: Option<&'a Stage2Config>,
            #[serde(skip_serializing_if = "Option::is_none")]
            sampler: Option<&'a SamplerConfig>,
            #[serde(skip_serializing_if = "Option::is_none")]
            eval: Option<&'a EvalSection>,
        }
        let scope = Scope {
            seed: self.seed,
            dataset: &self.dataset,
            model: &self.model,
            teacher: &self.teacher,
            stage1: (stage >= Stage::Distill).then_some(&self.stage1),
            stage2: (stage >= Stage::Refine).then_some(&self.stage2),
            sampler: (stage >= Stage::Eval).then_some(&self.sampler),
            eval: (stage >= Stage::Eval).then_some(&self.eval),
        };
        let text = toml::to_string(&scope).expect("config is always serializable");
        sha256_hex(format!("{}\n{text}", stage.name()).as_bytes())
    }

    /// Shapes of the observation and clean sample for the configured dataset.
    pub fn data_dims(&self) -> Result<(usize, usize), HarnessError> {
        let reg = dataset_registry(self.dataset.degradation);
        let (hr, lr) = reg.get(&self.dataset.name)?.shapes();
        Ok((hr.iter().product(), lr.iter().product()))
    }

    pub fn velocity_arch(&self) -> Result<VelocityArch, HarnessError> {
        let (state_dim, obs_dim) = self.data_dims()?;
        Ok(VelocityArch {
            state_dim,
            cond_dim: condition_dim(obs_dim),
            embed_dim: self.model.embed_dim,
            hidden: self.model.hidden.clone(),
        })
    }

    /// Checks values and registry names without generating data or touching files.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let (state_dim, _) = self.data_dims()?;
        if self.dataset.train_size == 0 || self.dataset.eval_size == 0 {
            return bad("dataset sizes must be at least 1".into());
        }
        if self.dataset.name == "tiny-patches" {
            let f = self.dataset.degradation.downsample_factor;
            if f == 0 || !crate::data::PATCH_SIDE.is_multiple_of(f) {
                return bad(format!("downsample factor {f} does not divide the patch side"));
            }
        }
        if self.model.embed_dim < 2 || !self.model.embed_dim.is_multiple_of(2) {
            return bad("model.embed_dim must be even and at least 2".into());
        }
        for (name, batch) in [
            ("teacher", self.teacher.batch_size),
            ("stage1", self.stage1.batch_size),
            ("stage2", self.stage2.batch_size),
        ] {
            if batch == 0 {
                return bad(format!("{name}.batch_size must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.teacher.condition_dropout) {
            return bad("teacher.condition_dropout must lie in [0, 1]".into());
        }
        self.stage1
            .validate()
            .map_err(|e| HarnessError::Config(format!("stage1: {e}")))?;
        self.stage2
            .validate()
            .map_err(|e| HarnessError::Config(format!("stage2: {e}")))?;
        integrator_registry::<f32>().get(&self.sampler.scheme)?;
        if self.sampler.num_steps == 0 {
            return bad("sampler.num_steps must be at least 1".into());
        }
        if self.eval.seeds < 2 {
            return bad("eval.seeds must be at least 2".into());
        }
        if self.eval.student_steps.is_empty() || self.eval.student_steps.contains(&0) {
            return bad("eval.student_steps must be nonempty and positive".into());
        }
        if self.eval.diversity_index >= self.dataset.eval_size {
            return bad("eval.diversity_index must index the evaluation set".into());
        }
        distance_registry(state_dim).get(&self.eval.distance)?;
        Ok(())
    }
}
