use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("instrument {instrument}: stage {stage}: {source}")]
    Stage {
        instrument: String,
        stage: &'static str,
        #[source]
        source: recurrence_core::Error,
    },

    #[error("{0}")]
    Core(#[from] recurrence_core::Error),

    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("{n_failed} instrument(s) failed; first: {first}")]
    Pipeline { n_failed: usize, first: Box<CliError> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Stage { source, .. } | CliError::Core(source) => {
                if source.is_numeric() {
                    EXIT_NUMERIC
                } else {
                    EXIT_DATA
                }
            }
            CliError::Input { .. } | CliError::Io(_) => EXIT_DATA,
            CliError::Pipeline { first, .. } => first.exit_code(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
