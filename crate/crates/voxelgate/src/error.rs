use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] voxelgate_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    InFile { path: PathBuf, source: Box<Error> },
    #[error("bad NIfTI magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("value overflow: {0}")]
    ValueOverflow(String),
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} ({cases})")]
    NonFiniteLoss { epoch: usize, batch: usize, cases: String },
    #[error("slice {index} out of range for {extent} axial slices")]
    SliceOutOfRange { index: usize, extent: usize },
    #[error("{0}")]
    Data(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes: 1 usage/config, 2 data, 3 numerical fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Attaches a file path to errors that do not already carry one.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile { path: path.to_path_buf(), source: Box::new(e) },
        }
    }

    /// The innermost error, past any file context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn exit_kind(&self) -> ExitKind {
        use voxelgate_core::Error as C;
        match self.root() {
            Error::Config(_) | Error::Core(C::InvalidConfig(_) | C::InvalidRate(_) | C::SpecInfeasible(_)) => {
                ExitKind::Usage
            }
            Error::NonFiniteLoss { .. } | Error::Core(C::NonFiniteInput) => ExitKind::Numerical,
            _ => ExitKind::Data,
        }
    }
}
