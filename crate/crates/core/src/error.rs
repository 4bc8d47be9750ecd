use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Degenerate,
    NonConvergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no ground points available to compute the elevation threshold")]
    NoGroundPoints,
    #[error("point projects to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("expected a 3-band RGB raster, got {0} band(s)")]
    NotThreeBands(usize),
    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),
    #[error("rasters do not overlap")]
    NoOverlap,
    #[error("initial matching produced no mutual nearest-neighbour pairs")]
    NoMutualPairs,
    #[error("too few points: need more than {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("RANSAC found no consensus set")]
    NoConsensus,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("optimisation did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("empty control point list")]
    EmptyList,
    #[error("shift before registration is zero")]
    ZeroBefore,
    #[error("scene specification infeasible: {0}")]
    SpecInfeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::PointAtInfinity(_)
            | Error::NoMutualPairs
            | Error::TooFewPoints { .. }
            | Error::DegenerateInput(_)
            | Error::NoConsensus
            | Error::DegenerateConfiguration(_) => ErrorKind::Degenerate,
            Error::NonConvergence(_) => ErrorKind::NonConvergence,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
