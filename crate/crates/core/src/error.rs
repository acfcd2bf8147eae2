use thiserror::Error;

/// Errors produced by the geometry, representation, loss and I/O layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    /// The box is too close to axis-aligned for the area-ratio encoding.
    /// Callers should route it through the horizontal-box path.
    #[error("near-horizontal box: {0}")]
    NearHorizontal(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// `true` for errors caused by the geometry of the input rather than its syntax.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::InvalidPolygon(_)
                | Error::DegenerateBox(_)
                | Error::NearHorizontal(_)
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
