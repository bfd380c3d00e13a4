//! Experiment configuration, checkpoints, reports and the stage pipeline.

mod checkpoint;
mod config;
mod diagnose;
mod pipeline;
mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting, read_checkpoint_meta,
    save_checkpoint, CheckpointError, CheckpointMeta, CheckpointModel, ModelArch, ModelKind, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{DatasetSection, EvalSection, ExperimentConfig, ModelSection, Stage};
pub use diagnose::{diagnose_isc, IscDiagnosis};
pub use pipeline::{
    artifact_path, eval_dataset, load_discriminator, load_stage_checkpoint, run_pipeline, sample_checkpoint,
    stage_outputs, train_dataset, PipelineOptions, PipelineSummary, SampleSource, StageOutcome, METRICS_CSV,
};
pub use report::{emit_report, format_g6, loss_plot_svg, write_report, write_table, Cell, MetricRow, Record};

use crate::data::DataError;
use crate::flow::FlowError;
use crate::isc::IscError;
use crate::metrics::MetricError;
use crate::refine::RefineError;
use crate::registry::UnknownName;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("missing {path}; run the '{stage}' stage first")]
    MissingInput { stage: &'static str, path: PathBuf },
    #[error("{path} was produced by a different config; rerun the '{stage}' stage (use --force to overwrite)")]
    Stale { stage: &'static str, path: PathBuf },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Isc(#[from] IscError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    UnknownName(#[from] UnknownName),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
