use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor shapes.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An argument outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Input data violates a precondition (empty set, all-missing signal, ...).
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    /// NaN or infinity encountered during training.
    #[error("training error: {0}")]
    Training(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Correlation of a constant sequence.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    /// A caller-supplied hook (checkpoint writer, logger) failed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
