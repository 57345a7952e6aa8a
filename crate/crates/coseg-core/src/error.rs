use alloc::string::String;
use core::fmt;

/// Errors raised by the numeric core and the episodic protocol.
///
/// The variants map onto the error classes the operations document:
/// shape mismatches, violated call contracts, bad configuration,
/// sampling failures and malformed data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Operand shapes do not fit the operation; names both shapes.
    Dimension(String),
    /// A call precondition was violated (non-scalar loss, empty input, ...).
    Contract(String),
    /// Configuration values are inconsistent with each other or the data.
    Config(String),
    /// An episode could not be drawn from the dataset index.
    Sampling(String),
    /// Stored data violates its documented format or range.
    Data(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Dimension(msg) => write!(f, "dimension error: {msg}"),
            CoreError::Contract(msg) => write!(f, "contract error: {msg}"),
            CoreError::Config(msg) => write!(f, "configuration error: {msg}"),
            CoreError::Sampling(msg) => write!(f, "sampling error: {msg}"),
            CoreError::Data(msg) => write!(f, "data error: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}
