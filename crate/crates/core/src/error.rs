use std::io;

use thiserror::Error;

use crate::runtime::wire::DecodeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),

    #[error("protocol error: {0}")]
    Protocol(#[from] DecodeError),

    #[error("handshake rejected: {0}")]
    Handshake(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::InvalidModel(_) => "model",
            Error::Format(_) => "format",
            Error::InvalidArgument(_) => "argument",
            Error::BudgetInfeasible(_) => "budget",
            Error::Protocol(_) => "protocol",
            Error::Handshake(_) => "handshake",
            Error::Transport(_) => "transport",
            Error::Remote { .. } => "remote",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
