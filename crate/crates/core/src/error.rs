use std::path::PathBuf;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid MRC file {path}: {reason}")]
    InvalidMrc { path: PathBuf, reason: String },

    #[error("unsupported MRC mode {mode} in {path}: only modes 0, 1, 2 are supported")]
    UnsupportedMode { path: PathBuf, mode: i32 },

    #[error("header dims {dims:?} exceed the safety cap {cap} (corrupt header?)")]
    DimsExceedCap { dims: (i64, i64, i64), cap: usize },

    #[error("invalid density map: {0}")]
    InvalidMap(String),

    #[error("no sample point lies at or above the contour level (empty cloud)")]
    EmptyCloud,

    #[error("density vector undefined: kernel mean coincides with the query point")]
    UndefinedDirection,

    #[error("all shifted points were classified as noise (no keypoints)")]
    EmptyKeypoints,

    #[error("degenerate local reference frame: {0}")]
    DegenerateFrame(String),

    #[error("coarse estimation failed: {0}")]
    CoarseFailure(String),

    #[error("no alignment candidate survived: {0}")]
    NoCandidates(String),

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code class for the CLI: 2 for "pipeline found no solution",
    /// 1 for everything else (I/O, parsing, bad arguments).
    pub fn is_no_solution(&self) -> bool {
        matches!(
            self,
            Error::EmptyCloud
                | Error::EmptyKeypoints
                | Error::CoarseFailure(_)
                | Error::NoCandidates(_)
        )
    }
}
