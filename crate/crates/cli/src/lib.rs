//! Experiment harness for `sinkflow`: JSON configs, run orchestration, CSV and
//! JSON reports with pass/fail verdicts, run manifests and static SVG plots.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod report;
pub mod svg;

use std::path::{Path, PathBuf};

pub use config::{Experiment, ExperimentConfig};
pub use manifest::RunManifest;
pub use report::{Check, Report, Table, Verdict};

/// Environment variable naming the directory under which runs are written.
pub const OUTPUT_ROOT_VAR: &str = "SINKFLOW_OUTPUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Numeric(#[from] sinkflow::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("nothing to plot")]
    EmptyTable,

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Output root: `$SINKFLOW_OUTPUT`, else `./sinkflow-out`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sinkflow-out"))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
