use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("alpha_bar is zero at step {t}; refusing to invert the forward marginal")]
    Singularity { t: usize },

    #[error("non-finite value in {term}")]
    Numeric { term: String },

    #[error("attention hook failed at layer `{layer}`, step {step}: {message}")]
    Hook {
        layer: String,
        step: usize,
        message: String,
    },

    #[error("client `{client}` failed after {attempts} attempt(s): {message}")]
    Client {
        client: String,
        attempts: u32,
        message: String,
    },

    #[error("degenerate embedding: `{0}` has zero norm")]
    DegenerateEmbedding(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("protocol error in `{field}`: {message}")]
    Protocol {
        field: String,
        message: String,
        /// Raw payload that failed to parse, kept for diagnosis.
        raw: Option<String>,
    },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("parse error at {locator}: {message}")]
    Parse { locator: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Client,
    Numeric,
    Io,
    Data,
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn protocol(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Protocol {
            field: field.into(),
            message: message.into(),
            raw: None,
        }
    }

    pub fn numeric(term: impl Into<String>) -> Self {
        Error::Numeric { term: term.into() }
    }

    pub fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn with_raw(self, payload: &str) -> Self {
        match self {
            Error::Protocol { field, message, .. } => Error::Protocol {
                field,
                message,
                raw: Some(payload.to_string()),
            },
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } => ErrorClass::Config,
            Error::Client { .. } | Error::Protocol { .. } => ErrorClass::Client,
            Error::Numeric { .. } | Error::Singularity { .. } | Error::DegenerateEmbedding(_) => {
                ErrorClass::Numeric
            }
            Error::Io(_) | Error::Parse { .. } => ErrorClass::Io,
            Error::StepOutOfRange { .. }
            | Error::Shape { .. }
            | Error::Hook { .. }
            | Error::Consistency(_) => ErrorClass::Data,
        }
    }
}
