use thiserror::Error;

/// Errors raised by the estimation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a structural or numerical precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Operand shapes do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A triangular factor has a (numerically) zero diagonal entry.
    #[error("singular system: {0}")]
    Singular(String),

    /// A switching system failed validation; each entry names the offending path.
    #[error("invalid system: {}", format_violations(.0))]
    InvalidSystem(Vec<Violation>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One failed check reported by [`crate::SwitchingSystem::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
