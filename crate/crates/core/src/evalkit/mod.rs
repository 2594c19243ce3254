//! Evaluation: datasets built from rollouts, decision and task success,
//! per-DS reports and the label-growth experiment.

mod datasets;
mod growth;
mod metrics;
mod report;
pub mod scenario;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embeddings::EmbeddingError;
use crate::executor::ExecutorError;
use crate::switcher::SwitcherError;

pub use datasets::{
    build_datasets, deciding_factors, executed_parts, factor_object, synthetic_ds, tag_observability, AnomalyLabel,
    AnomalySample, Datasets, DsDataset, FrameSource, LabeledSample, Split, SplitMode, SyntheticDsSpec,
};
pub use growth::{growth_csv, growth_variants, label_growth, GrowthPoint, LabelGrowthConfig};
pub use metrics::{decide, decision_success, evaluate_ds, DsResult, EvalConfig};
pub use report::{histogram, report, write_report, MethodSummary, Report, HISTOGRAM_BINS, REPORT_VERSION};
pub use scenario::{task_success, Goal};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Switcher(#[from] SwitcherError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
