use alloc::string::String;

/// Errors raised by the core algorithms and pipelines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {component}")]
    NonFinite { component: String },
    #[error("model is frozen: {0}")]
    Frozen(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;

pub(crate) fn non_finite(component: &str) -> Error {
    Error::NonFinite { component: component.into() }
}

pub(crate) fn check_finite(component: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(non_finite(component))
    }
}
