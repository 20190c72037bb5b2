use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] smartim_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}: {message}")]
    Row { path: String, row: u64, message: String },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for invalid input, 3 for infeasible requests or
    /// too little data, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use smartim_core::Error as C;
        match self {
            Error::Core(C::Argument(_) | C::Validation { .. } | C::UnknownScenario(_) | C::Alignment(_)) => 2,
            Error::Core(C::Infeasible(_) | C::InsufficientData(_) | C::EmptySnapshot(_)) => 3,
            Error::Core(C::Numerical(_)) => 1,
            Error::Row { .. } | Error::Format { .. } | Error::Usage(_) => 2,
            Error::Io { .. } => 1,
        }
    }
}
