use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use smflab::data::save_dataset;
use smflab::harness::{
    artifact_path, diagnose_isc, eval_dataset, run_pipeline, sample_checkpoint, train_dataset, write_table, Cell,
    ExperimentConfig, PipelineOptions, SampleSource, Stage, StageOutcome,
};
use smflab::rng::derive_seed;

#[derive(Parser)]
#[command(
    name = "smflab",
    version,
    about = "One-step flow distillation on toy conditional tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the config and print the plan without touching any file.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Rerun even if outputs for this config already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the flow-matching teacher.
    TrainTeacher(StageArgs),
    /// Stage 1: distill the teacher into a one-step student.
    Distill(StageArgs),
    /// Stage 2: refine the student with distillation, adversarial and reconstruction losses.
    Refine(StageArgs),
    /// Evaluate teacher and students under every evaluation seed.
    Eval(StageArgs),
    /// Run several stages in order (all by default).
    Pipeline {
        #[command(flatten)]
        args: StageArgs,
        /// Comma-separated subset of teacher,distill,refine,eval.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
    /// Draw one sample per evaluation condition and write them as CSV.
    Sample {
        #[command(flatten)]
        common: Common,
        /// teacher, stage1 or refined.
        #[arg(long, default_value = "refined")]
        source: String,
        /// Student jumps per sample.
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Output CSV (default: samples_<source>.csv in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Splitting-consistency residuals and branch-selection accounting.
    DiagnoseIsc(Common),
    /// Write the generated train or eval split in the binary dataset format.
    ExportDataset {
        #[command(flatten)]
        common: Common,
        /// train or eval.
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stages(args: &StageArgs, stages: &[Stage]) -> Result<()> {
    let cfg = load(&args.common)?;
    let opts = PipelineOptions {
        force: args.force,
        dry_run: args.common.dry_run,
    };
    let summary = run_pipeline(&cfg, stages, opts)?;
    for (stage, outcome) in &summary.stages {
        match outcome {
            StageOutcome::Blocked(prior) => println!("{:<8} blocked: run the '{prior}' stage first", stage.name()),
            _ => println!("{:<8} {:?}", stage.name(), outcome),
        }
    }
    for path in &summary.written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainTeacher(a) => stages(&a, &[Stage::Teacher]),
        Command::Distill(a) => stages(&a, &[Stage::Distill]),
        Command::Refine(a) => stages(&a, &[Stage::Refine]),
        Command::Eval(a) => stages(&a, &[Stage::Eval]),
        Command::Pipeline { args, stages: names } => {
            let list = match names {
                None => Stage::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .filter(|n| !n.is_empty())
                    .map(|n| Stage::parse(n))
                    .collect::<Result<_, _>>()?,
            };
            stages(&args, &list)
        }
        Command::Sample {
            common,
            source,
            steps,
            out,
        } => {
            let cfg = load(&common)?;
            let src = SampleSource::parse(&source)?;
            anyhow::ensure!(steps > 0, "--steps must be at least 1");
            let out = out.unwrap_or_else(|| artifact_path(&cfg, &format!("samples_{source}.csv")));
            if common.dry_run {
                println!("would sample {source} ({steps} step(s)) into {}", out.display());
                return Ok(());
            }
            let samples = sample_checkpoint(&cfg, src, steps, derive_seed(cfg.seed, "sample"))?;
            let mut header = vec!["row".to_string()];
            header.extend((0..samples.cols()).map(|j| format!("x{j}")));
            let rows: Vec<Vec<Cell>> = (0..samples.rows())
                .map(|i| {
                    let mut row = vec![Cell::Int(i as u64)];
                    row.extend(samples.row(i).iter().map(|v| Cell::Float(*v as f64)));
                    row
                })
                .collect();
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_table(&header, &rows, std::io::BufWriter::new(file))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::DiagnoseIsc(common) => {
            let cfg = load(&common)?;
            if common.dry_run {
                println!("config ok; diagnostics not run");
                return Ok(());
            }
            print!("{}", diagnose_isc(&cfg)?);
            Ok(())
        }
        Command::ExportDataset { common, split, out } => {
            let cfg = load(&common)?;
            anyhow::ensure!(split == "train" || split == "eval", "--split must be train or eval");
            if common.dry_run {
                println!("would write the {split} split to {}", out.display());
                return Ok(());
            }
            let ds = if split == "train" {
                train_dataset(&cfg)?
            } else {
                eval_dataset(&cfg)?
            };
            save_dataset(&ds, &out)?;
            println!("wrote {} ({} rows)", out.display(), ds.len());
            Ok(())
        }
    }
}
