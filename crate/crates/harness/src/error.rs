use thiserror::Error;

/// Harness failures, split by exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] mlirl_core::Error),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{0} invariant check(s) failed")]
    Invariant(usize),

    #[error("output: {0}")]
    Output(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// 2 for invariant violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invariant(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn input(msg: impl Into<String>) -> HarnessError {
    HarnessError::Input(msg.into())
}
