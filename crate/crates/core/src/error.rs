use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Tensor or layer geometry does not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// A model, layer or sampler was configured with unusable values.
    #[error("config error: {0}")]
    Config(String),
    /// Inputs violate a contract (labels out of range, non-binary targets).
    #[error("validation error: {0}")]
    Validation(String),
    /// The data cannot support the requested operation.
    #[error("data error: {0}")]
    Data(String),
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! validation_err {
    ($($arg:tt)*) => { $crate::error::Error::Validation(alloc::format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(alloc::format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use data_err;
pub(crate) use shape_err;
pub(crate) use validation_err;
