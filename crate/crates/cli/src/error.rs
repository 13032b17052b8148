use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ubem_gp_core::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("stage `{stage}` needs {artifact}, which is missing; run `{stage_hint}` first")]
    MissingDependency { stage: String, artifact: PathBuf, stage_hint: String },

    #[error("audit failed: {0}")]
    Audit(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<CliError> },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format { path: path.into(), message: message.to_string() }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ CliError::Stage { .. } => e,
            e @ CliError::MissingDependency { .. } => e,
            e => CliError::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(_) => "core",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::MissingDependency { .. } => "missing_dependency",
            CliError::Audit(_) => "audit",
            CliError::Stage { source, .. } => source.kind(),
        }
    }

    pub fn stage(&self) -> Option<&str> {
        match self {
            CliError::Stage { stage, .. } | CliError::MissingDependency { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            stage: Option<&'a str>,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper { error: Body { kind: self.kind(), stage: self.stage(), message: self.to_string() } })
            .expect("plain strings serialize")
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "missing_dependency" => 3,
            _ => 1,
        }
    }
}
