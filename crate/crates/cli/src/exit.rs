//! Error to exit-code mapping. Every failure prints one line:
//! `error[<code>:<kind>] <message>`.

use orthocav::CavError;

pub const VALIDATION: u8 = 2;
pub const DIVERGENCE: u8 = 3;
pub const IO: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Core(CavError),
    Usage(String),
}

impl From<CavError> for CliError {
    fn from(e: CavError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Core(CavError::NonFiniteLoss { .. }) => DIVERGENCE,
            CliError::Core(CavError::Io { .. }) => IO,
            _ => VALIDATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                CavError::InvalidMatrix(_) => "invalid_matrix",
                CavError::DegenerateVector { .. } => "degenerate_vector",
                CavError::SingleClassConcept { .. } => "single_class_concept",
                CavError::UndefinedMetric(_) => "undefined_metric",
                CavError::NonFiniteLoss { .. } => "non_finite_loss",
                CavError::InvalidConfig(_) => "invalid_config",
                CavError::InfeasibleCorrelation { .. } => "infeasible_correlation",
                CavError::UnknownConcept { .. } => "unknown_concept",
                CavError::Parse { .. } => "parse",
                CavError::Io { .. } => "io",
            },
        }
    }

    pub fn line(&self) -> String {
        let message = match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
        };
        let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}:{}] {flat}", self.code(), self.kind())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
