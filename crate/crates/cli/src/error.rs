use vtrig_core::Error as CoreError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// No CPs, no periodicity, or no identifiable length correction.
    #[error("{0}")]
    NotFound(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::NotFound(_) => EXIT_NOT_FOUND,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::Contract(_) => CliError::Config(msg),
            CoreError::NoPeriodicity(_)
            | CoreError::NoCpsFound { .. }
            | CoreError::DeltaNotIdentifiable { .. } => CliError::NotFound(msg),
            CoreError::Io { .. }
            | CoreError::Format(_)
            | CoreError::Data { .. }
            | CoreError::Bounds { .. }
            | CoreError::DegenerateProfile { .. } => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
