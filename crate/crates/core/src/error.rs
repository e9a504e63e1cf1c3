use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed {kind} in {}: {detail}", .path.display())]
    Malformed {
        kind: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("extent mismatch: {0}")]
    Extent(String),

    #[error("fit diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Stable short identifier used by the CLI's single-line errors and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::Autodiff(_) => "autodiff",
            Error::InvalidRotation(_) => "invalid_rotation",
            Error::InvalidCamera(_) => "invalid_camera",
            Error::Config(_) => "config",
            Error::MissingFile(_) => "missing_file",
            Error::Malformed { .. } => "malformed",
            Error::Extent(_) => "extent",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn malformed(
        kind: &'static str,
        path: impl Into<PathBuf>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Malformed {
            kind,
            path: path.into(),
            detail: detail.into(),
        }
    }
}
