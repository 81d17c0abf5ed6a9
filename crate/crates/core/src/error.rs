use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incomplete bundle: missing {}", .0.display())]
    IncompleteBundle(PathBuf),

    #[error("validation: {0}")]
    Validation(String),

    #[error("empty background: no valid background pixels in any frame")]
    EmptyBackground,

    #[error("placement failure for object {object_id} in frame {frame}: {reason}")]
    PlacementFailure {
        object_id: u32,
        frame: usize,
        reason: String,
    },

    #[error("insufficient matches: {found} < 3")]
    InsufficientMatches { found: usize },

    #[error("degenerate matches: point set has no spatial extent")]
    DegenerateMatches,

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("unknown {field} label {label:?}")]
    UnknownLabel { field: &'static str, label: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("seeding produced zero particles for object {0}")]
    EmptySeed(u32),

    #[error("particle {particle} left the simulation domain at {position:?}")]
    OutOfDomain { particle: u64, position: [f64; 3] },

    #[error("CFL violation: dt {dt:e} exceeds stable bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("simulation blow-up at step {step}: non-finite state in particle {particle}")]
    BlowUp { step: u64, particle: u64 },

    #[error("simulation blow-up at frame {frame}: {source}")]
    BlowUpAtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("empty loss support: no countable pixels in any frame")]
    EmptyLossSupport,

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors that indicate a numerical failure inside the simulator.
    pub fn is_blow_up(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. } | Error::BlowUpAtFrame { .. } | Error::CflViolation { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Image { .. } | Error::IncompleteBundle(_)
        )
    }
}
