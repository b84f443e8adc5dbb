use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("{0}")]
    Usage(String),
    #[error("missing file {path}: {message}")]
    MissingFile { path: String, message: String },
    #[error("{0:#}")]
    Run(#[from] anyhow::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::InvalidConfig(_) => "invalid-config",
            CliError::Usage(_) => "usage",
            CliError::MissingFile { .. } => "missing-file",
            CliError::Run(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig(_) | CliError::Usage(_) => 2,
            CliError::MissingFile { .. } | CliError::Run(_) => 1,
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self, command: &str) -> Value {
        let details: Vec<String> = match self {
            CliError::InvalidConfig(problems) => problems.clone(),
            CliError::MissingFile { path, .. } => vec![path.clone()],
            CliError::Run(e) => e.chain().skip(1).map(|c| c.to_string()).collect(),
            CliError::Usage(_) => Vec::new(),
        };
        json!({
            "error": {
                "command": command,
                "kind": self.kind(),
                "message": self.to_string(),
                "details": details,
            },
            "version": gazeworld::VERSION,
        })
    }
}
