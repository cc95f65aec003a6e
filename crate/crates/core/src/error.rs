use alloc::string::String;

/// Failure kinds shared by every module of the core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value or network description cannot be used.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (shape, key set, state).
    #[error("contract error: {0}")]
    Contract(String),
    /// A computation produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(alloc::format!($($arg)*)) };
}
macro_rules! numeric_err {
    ($($arg:tt)*) => { $crate::error::Error::Numeric(alloc::format!($($arg)*)) };
}
pub(crate) use {config_err, contract_err, numeric_err};
