use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },

    #[error("point lies behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PixelOutOfBounds { .. } => "pixel_out_of_bounds",
            Error::BehindCamera { .. } => "behind_camera",
            Error::Validation(_) => "validation",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::Shape(_) => "shape",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }

    /// Validation-type errors are caused by user input; everything else is internal
    /// or numeric.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::PixelOutOfBounds { .. }
                | Error::BehindCamera { .. }
                | Error::Shape(_)
                | Error::Checkpoint(_)
                | Error::Io { .. }
                | Error::Image { .. }
                | Error::Json { .. }
        )
    }
}
