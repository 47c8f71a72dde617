use sumloop::engine::{ConfigError, EngineError};
use sumloop::metrics::{EvalError, RulesError};
use sumloop::model::AdapterError;

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_ADAPTER: u8 = 2;
pub const EXIT_SUSPENDED: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl ToString) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.to_string(),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Adapter { .. } => EXIT_ADAPTER,
            _ => EXIT_INVALID,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        Self {
            code: EXIT_ADAPTER,
            message: e.to_string(),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::invalid(e)
            }
        })*
    };
}

invalid_from!(
    ConfigError,
    EvalError,
    RulesError,
    sumloop::corpus::CorpusError,
    std::io::Error,
    csv::Error
);
