use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular geotransform (determinant {0})")]
    SingularTransform(f64),
    #[error("degenerate box [{xmin}, {ymin}, {xmax}, {ymax}]")]
    DegenerateBox { xmin: f64, ymin: f64, xmax: f64, ymax: f64 },
    #[error("label {0:?} has no broad class in the hierarchy")]
    UnknownLabel(String),
    #[error("overlap fraction {0} outside [0, 1)")]
    InvalidOverlap(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ground truth set is empty")]
    EmptyGroundTruth,
    #[error("detection {0} has no classifier score")]
    MissingClassifierScore(usize),
    #[error("degenerate {0} scores: min equals max")]
    DegenerateScores(&'static str),
    #[error("no background without class {0:?}")]
    NoEligibleBackground(String),
    #[error("harmonization region is empty")]
    EmptyRegion,
    #[error("sprite at ({col}, {row}) does not fit in the {width}x{height} background")]
    OutOfBounds { col: i64, row: i64, width: u32, height: u32 },
    #[error("placement collides with an existing annotation")]
    CollisionRejected,
    #[error("sprite has no opaque pixels")]
    EmptySprite,
    #[error("invalid Canny thresholds: low {low}, high {high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("generator failed: {0}")]
    GeneratorFailure(String),
    #[error("covariance has negative eigenvalue {0} after regularization")]
    SingularCovariance(f64),
    #[error("source {code} has {available} samples, {requested} requested")]
    InsufficientSamples { code: String, available: usize, requested: usize },
    #[error("image: {0}")]
    Image(String),
    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    Schema { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
