use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("heading {psi} outside (-pi/2, pi/2) for vehicle {vehicle}")]
    HeadingOutOfRange { vehicle: String, psi: f64 },
    #[error("corrupt frame: {0}")]
    CorruptFrame(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
