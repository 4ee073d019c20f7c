//! Configuration, validation and run orchestration for topoflock.

pub mod config;
pub mod run;
pub mod setup;

use std::path::Path;

use config::{Issue, LoadedConfig};
pub use run::{run_loaded, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Issue>),
    #[error(transparent)]
    Core(#[from] topoflock_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// Process exit code: 2 configuration, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use topoflock_core::Error as E;
        match self {
            CliError::Validation(_) | CliError::Json(_) => 2,
            CliError::Core(E::Config(_) | E::Unsupported(_)) => 2,
            CliError::Core(E::Io(_) | E::Csv(_)) | CliError::Io { .. } => 4,
            CliError::Core(_) => 3,
        }
    }
}

/// Reads and parses a configuration file (no semantic validation).
pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    config::parse_text(&text, &base).map_err(|i| CliError::Validation(vec![i]))
}

/// Parses and fully validates a configuration file.
pub fn validate(path: &Path) -> Result<LoadedConfig, CliError> {
    let lc = load_config(path)?;
    setup::validate(&lc).map_err(CliError::Validation)?;
    Ok(lc)
}

pub fn run(path: &Path, out: &Path) -> Result<RunSummary, CliError> {
    let lc = load_config(path)?;
    run_loaded(&lc, out)
}
