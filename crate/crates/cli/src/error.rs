use std::io;

use dtwcert::certify::CertifyError;
use dtwcert::dtw::DtwError;
use dtwcert::smoothing::SmoothingError;
use dtwcert::{DataError, DetectorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::InvalidParam(_) | DetectorError::RankTooLarge { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SmoothingError> for CliError {
    fn from(e: SmoothingError) -> Self {
        match e {
            SmoothingError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            SmoothingError::Domain(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CertifyError> for CliError {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::Smoothing(s) => s.into(),
            CertifyError::RadiusInsideSlack { .. } | CertifyError::NegativeInput(_) => CliError::Invariant(e.to_string()),
            CertifyError::Dtw(d) => d.into(),
        }
    }
}

impl From<DtwError> for CliError {
    fn from(e: DtwError) -> Self {
        match e {
            DtwError::ShapeMismatch(_) | DtwError::EnvelopeMismatch => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
