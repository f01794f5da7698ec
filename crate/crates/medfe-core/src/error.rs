use alloc::string::String;

/// Error type shared across the crate.
///
/// `Contract` covers violated preconditions (shape mismatches, invalid
/// arguments), `NonFinite` covers NaN/Inf aborts, and `Format` covers
/// malformed serialized data such as checkpoints.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Contract(alloc::format!($($arg)*)));
        }
    };
}

pub(crate) use contract;
