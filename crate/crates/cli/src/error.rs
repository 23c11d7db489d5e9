use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run {run} failed: {source}")]
    Run {
        run: String,
        #[source]
        source: nesht_core::Error,
    },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{failed} theory check(s) failed")]
    TheoryCheck { failed: usize },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn from_core_config(e: nesht_core::Error) -> Self {
        HarnessError::Config(e.to_string())
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit code: 2 config, 3 runtime, 4 failed theory checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Run { .. } | HarnessError::Io { .. } | HarnessError::Runtime(_) => 3,
            HarnessError::TheoryCheck { .. } => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Run { .. } => "run",
            HarnessError::Io { .. } => "io",
            HarnessError::TheoryCheck { .. } => "theory_check",
            HarnessError::Runtime(_) => "runtime",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::to_string(&Report {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        })
        .expect("error report serializes")
    }
}
