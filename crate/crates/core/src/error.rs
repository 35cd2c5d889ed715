use thiserror::Error;

use crate::certify::CertifyError;
use crate::framing::FramingError;
use crate::sim::SimError;
use crate::timetag::TimetagError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Timetag(#[from] TimetagError),
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Errors caused by the caller's parameters rather than by the data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Framing(FramingError::InvalidConfig(_))
                | Error::Sim(_)
                | Error::Timetag(TimetagError::InvalidSearch(_) | TimetagError::InvalidChannelMap(_))
        )
    }
}
