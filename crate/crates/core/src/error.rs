use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad files, unparseable configs, out-of-range arguments. Exit code 2.
    Input,
    /// The pipeline ran but could not produce a result on this scene. Exit code 3.
    Pipeline,
    /// Bugs and broken invariants. Exit code 4.
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty reference cloud")]
    EmptyReferenceCloud,
    #[error("degenerate correspondence set")]
    DegenerateCorrespondences,
    #[error("joint limit violation: {0}")]
    JointLimitViolation(String),
    #[error("ROI empty")]
    RoiEmpty,
    #[error("no object points")]
    NoObjectPoints,
    #[error("degenerate pair")]
    DegeneratePair,
    #[error("rank-deficient alignment")]
    RankDeficientAlignment,
    #[error("no valid bases: {0}")]
    NoValidBases(String),
    #[error("no hypotheses to select")]
    NoHypotheses,
    #[error("placement failed")]
    PlacementFailed,
    #[error("empty depth image")]
    EmptyDepthImage,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidInput(_) | Io { .. } | Parse { .. } => ErrorCategory::Input,
            EmptyReferenceCloud
            | DegenerateCorrespondences
            | JointLimitViolation(_)
            | RoiEmpty
            | NoObjectPoints
            | DegeneratePair
            | RankDeficientAlignment
            | NoValidBases(_)
            | NoHypotheses
            | PlacementFailed
            | EmptyDepthImage => ErrorCategory::Pipeline,
            Internal(_) => ErrorCategory::Internal,
        }
    }

    /// One-line machine-parseable form: `category: message`.
    pub fn machine_line(&self) -> String {
        let cat = match self.category() {
            ErrorCategory::Input => "input",
            ErrorCategory::Pipeline => "pipeline",
            ErrorCategory::Internal => "internal",
        };
        format!("{cat}: {self}")
    }
}
