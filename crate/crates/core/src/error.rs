use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bad magic {found:?}, expected \"SSPT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("dtype mismatch: file holds code {found}, reader expects {expected}")]
    DtypeMismatch { expected: u32, found: u32 },
    #[error("truncated tensor payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("trailing bytes after tensor payload: {0}")]
    TrailingBytes(u64),
    #[error("tensor dims {0:?} overflow the addressable size")]
    DimOverflow(Vec<u64>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fit diverged in stage {stage} at iteration {iteration}")]
    Diverged { stage: u8, iteration: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
