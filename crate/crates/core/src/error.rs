use alloc::string::String;

/// Errors shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Shapes, geometry or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),
    /// A layer geometry relation failed; `keys` names the offending fields.
    #[error("invalid geometry ({keys}): {detail}")]
    Geometry { keys: String, detail: String },
    /// NaN/Inf or an out-of-domain value showed up.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The API was called in a way its contract does not allow.
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::Error::Usage(alloc::format!($($arg)*)) };
}
macro_rules! numeric_err {
    ($($arg:tt)*) => { $crate::Error::Numeric(alloc::format!($($arg)*)) };
}
pub(crate) use {config_err, numeric_err, usage_err};
