use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A library error raised while reading `path`.
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: arpbox::Error,
    },

    #[error(transparent)]
    Core(#[from] arpbox::Error),
}

impl CliError {
    /// 1 for unreadable or malformed input, 2 for inputs that are
    /// well-formed but geometrically or numerically invalid.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::File { source, .. } | CliError::Core(source) => match source {
                arpbox::Error::Parse { .. } => 1,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
