//! Comparative batch runs, annotation sheets and metric aggregation.

mod metrics;
mod runner;
mod sheet;

pub use metrics::*;
pub use runner::*;
pub use sheet::*;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("repos file line {line}: {message}")]
    ReposFile { line: usize, message: String },
    #[error("no repositories listed")]
    NoRepos,
    #[error("no modes given")]
    NoModes,
    #[error("output directory {0} is not empty (use --force to reuse it)")]
    OutDirNotEmpty(PathBuf),
    #[error("no successful runs to export")]
    NoOkRuns,
    #[error("invalid runs index {path}: {message}")]
    RunsIndex { path: PathBuf, message: String },
    #[error("cannot read report {path}: {message}")]
    Report { path: PathBuf, message: String },
    #[error("annotations: no rows")]
    NoRows,
    #[error("annotations row {row}{}: {message}", .column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Row {
        row: u64,
        column: Option<String>,
        message: String,
    },
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> EvalError {
    let path = path.into();
    move |source| EvalError::Io { path, source }
}
