use alloc::string::String;

/// Errors raised by the core numerics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("calendar has no context for day {0}")]
    CalendarGap(i64),
    #[error("as-of day {as_of_day} precedes registration day {registration_day}")]
    BeforeRegistration {
        as_of_day: i64,
        registration_day: i64,
    },
    #[error("only one class present in labels")]
    SingleClass,
    #[error("backward called on a variable that is not a recorded scalar ({0})")]
    NoRecordedForward(&'static str),
    #[error("all positions are padded")]
    AllPadded,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl core::fmt::Display,
    actual: impl core::fmt::Display,
) -> Error {
    use alloc::string::ToString;
    Error::Shape {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
