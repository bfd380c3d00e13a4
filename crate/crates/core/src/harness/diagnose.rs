//! Splitting-consistency diagnostics for `diagnose-isc`.

use std::fmt;

use super::checkpoint::ModelArch;
use super::config::ExperimentConfig;
use super::pipeline::{artifact_path, eval_dataset, load_stage_checkpoint, STAGE1_CKPT};
use super::HarnessError;
use crate::flow::analytic_registry;
use crate::isc::{
    branch_rule_registry, isc_residual, isc_residual_scan, simulate_branches, Branch, Interval, StudentField,
    StudentModel,
};
use crate::metrics::dataset_conditions;
use crate::rng::{derive_seed, rng_from_seed};

const BRANCH_DRAWS: usize = 10_000;
const SCAN_TRIALS: usize = 1_000;
const STUDENT_TRIALS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct IscDiagnosis {
    pub configured_rule: String,
    pub branch_probability: f64,
    /// `(rule, description, simulated split fraction)` for every registered rule.
    pub rules: Vec<(String, String, f64)>,
    /// Worst splitting residual of each analytic field over random intervals.
    pub analytic: Vec<(String, f64)>,
    /// Residual of the non-additive `u = t²` at `(r, s, t) = (0, 0.5, 1)`.
    pub wrong_field_probe: f64,
    /// Worst residual of the stage-1 student on the first evaluation condition, if trained.
    pub student: Option<f64>,
}

pub fn diagnose_isc(config: &ExperimentConfig) -> Result<IscDiagnosis, HarnessError> {
    let seed = derive_seed(config.seed, "diagnose-isc");
    let p = config.stage1.branch_probability;
    let rules = branch_rule_registry();
    let mut rule_rows = Vec::new();
    for name in rules.names() {
        let rule = rules.get(name)?;
        let mut rng = rng_from_seed(seed);
        let branches = simulate_branches(rule.as_ref(), p, BRANCH_DRAWS, &mut rng);
        let split = branches.iter().filter(|b| **b == Branch::Split).count() as f64 / BRANCH_DRAWS as f64;
        rule_rows.push((name.to_string(), rule.describe().to_string(), split));
    }

    let fields = analytic_registry();
    let mut analytic = Vec::new();
    for name in fields.names() {
        let mut rng = rng_from_seed(derive_seed(seed, name));
        analytic.push((
            name.to_string(),
            isc_residual_scan(fields.get(name)?.as_ref(), SCAN_TRIALS, 2, &mut rng),
        ));
    }
    let wrong = fields.get("wrong-quadratic")?;
    let wrong_field_probe = isc_residual(wrong.as_ref(), &[0.0], Interval::from_lambda(0.0, 1.0, 0.5));

    let student = if artifact_path(config, STAGE1_CKPT).exists() {
        let arch = config.velocity_arch()?;
        let (model, _) =
            load_stage_checkpoint::<StudentModel<f32>>(config, STAGE1_CKPT, &ModelArch::Velocity(arch.clone()))?;
        let eval = eval_dataset(config)?;
        let cond = dataset_conditions(&eval).row(0).iter().map(|v| *v as f64).collect();
        let model = model.cast::<f64>();
        let field = StudentField { student: &model, cond };
        let mut rng = rng_from_seed(derive_seed(seed, "student"));
        Some(isc_residual_scan(&field, STUDENT_TRIALS, arch.state_dim, &mut rng))
    } else {
        None
    };

    Ok(IscDiagnosis {
        configured_rule: config.stage1.branch_rule.clone(),
        branch_probability: p,
        rules: rule_rows,
        analytic,
        wrong_field_probe,
        student,
    })
}

impl fmt::Display for IscDiagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "branch selection (p = {}, configured rule '{}')",
            self.branch_probability, self.configured_rule
        )?;
        writeln!(
            f,
            "  the training pseudocode and the prose disagree on which branch q < p selects"
        )?;
        for (name, desc, split) in &self.rules {
            let mark = if *name == self.configured_rule { "*" } else { " " };
            writeln!(
                f,
                " {mark} {name:<10} split fraction {split:.4} over {BRANCH_DRAWS} draws  ({desc})"
            )?;
        }
        writeln!(f, "splitting residual, max over {SCAN_TRIALS} random intervals")?;
        for (name, r) in &self.analytic {
            writeln!(f, "  {name:<16} {r:.3e}")?;
        }
        writeln!(
            f,
            "  wrong-quadratic at (r, s, t) = (0, 0.5, 1): {:.4}",
            self.wrong_field_probe
        )?;
        match self.student {
            Some(r) => writeln!(f, "stage-1 student, max over {STUDENT_TRIALS} intervals: {r:.3e}"),
            None => writeln!(f, "stage-1 student: no checkpoint (run 'distill')"),
        }
    }
}
