use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("mesh has no texture coordinates (missing UVs)")]
    MissingUvs,

    #[error("degenerate triangle {index} (zero area)")]
    DegenerateTriangle { index: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid image {path}: {message}")]
    InvalidImage { path: PathBuf, message: String },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("scene config error: {0}")]
    Config(String),

    #[error("camera/image count mismatch: {cameras} cameras, {images} images")]
    CountMismatch { cameras: usize, images: usize },

    #[error("point lies at or behind the camera plane (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("bilateral solve is underdetermined: all confidences are zero")]
    ZeroConfidence,

    #[error("overlapping UV triangles: {pairs:?}")]
    OverlappingUvs { pairs: Vec<(usize, usize)> },

    #[error("atlas has no valid texels")]
    EmptyAtlas,

    #[error("images share no valid pixels")]
    DisjointMasks,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
