use std::path::PathBuf;

/// Crate-wide error type. Variants carry enough context to name the failing
/// entity (splat index, config key, file path) in the message.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid rotation: quaternion {index} has zero norm")]
    ZeroQuaternion { index: usize },

    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("image {width}x{height} is smaller than the {window}x{window} ssim window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("frame index {frame} outside 1..={frames}")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("render degeneracy: singular projected covariance (det {det})")]
    RenderDegeneracy { det: f64 },

    #[error("optimizer diverged: non-finite gradient in {what}")]
    OptimizerDiverged { what: String },

    #[error(
        "collapse in stage {stage}, frame {frame}, iteration {iteration}: \
         {restarts} restart(s) exhausted ({reason})"
    )]
    Collapse {
        stage: &'static str,
        frame: usize,
        iteration: u64,
        restarts: u32,
        reason: String,
    },

    #[error("bad checkpoint magic in {path}")]
    BadMagic { path: PathBuf },

    #[error("unsupported checkpoint version {version} in {path}")]
    BadVersion { version: u32, path: PathBuf },

    #[error("malformed checkpoint {path}: {reason}")]
    MalformedCheckpoint { path: PathBuf, reason: String },

    #[error("oracle timed out after {seconds:.1}s waiting for {path}")]
    OracleTimeout { path: PathBuf, seconds: f64 },

    #[error("run directory {path} already contains artifacts (pass resume to continue it)")]
    RunDirNotEmpty { path: PathBuf },

    #[error("run directory {path} is locked by another process (stale lock file: {lock})")]
    RunDirLocked { path: PathBuf, lock: PathBuf },

    #[error("cannot resume: {0}")]
    Resume(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png: {0}")]
    Png(#[from] image::ImageError),
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
