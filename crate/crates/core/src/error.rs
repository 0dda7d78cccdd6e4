use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum QerrError {
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("matrix is not a member of group {group}")]
    NotAMember { group: String },

    #[error("{what} = {value} is out of range (max {max})")]
    Range {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("parse error{}: {msg}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QerrError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        QerrError::Validation(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        QerrError::Parse {
            line: None,
            msg: msg.into(),
        }
    }

    pub(crate) fn parse_at(line: usize, msg: impl Into<String>) -> Self {
        QerrError::Parse {
            line: Some(line),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, QerrError>;
