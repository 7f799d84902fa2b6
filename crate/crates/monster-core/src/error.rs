use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("homography is singular (|det| <= {0:e})")]
    SingularHomography(f64),

    #[error("degenerate point: homogeneous denominator {0:e} too close to zero")]
    DegeneratePoint(f64),

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("psi {psi} outside physical range (must exceed {min_psi})")]
    PsiOutOfPhysicalRange { psi: f64, min_psi: f64 },

    #[error("invalid psi range: min {0} must be below max {1}")]
    InvalidRange(f64, f64),

    #[error("object distance {z} not beyond focal length {f}")]
    ObjectInsideFocalLength { z: f64, f: f64 },

    #[error("insufficient overlap: {got} jointly valid pixels, need {need}")]
    InsufficientOverlap { got: usize, need: usize },

    #[error("reference carries no scale information (least-squares scale {0} <= 0)")]
    NonInformativeReference(f64),

    #[error("optimizer made no progress: no finite objective value was found")]
    NoProgress,

    #[error("manifest contains no records")]
    EmptyManifest,

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
