use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] spadfuse_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 config, 3 data, 4 solver.
    pub fn exit_code(&self) -> i32 {
        use spadfuse_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidParameter(_) | E::OutOfRange { .. }) => 2,
            CliError::Core(E::Solver(_)) => 4,
            CliError::Core(_) => 3,
        }
    }
}
