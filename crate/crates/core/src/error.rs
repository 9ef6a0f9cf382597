use thiserror::Error;

use crate::grid::TileOrigin;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("window {h}x{w} at {origin} exceeds grid of {grid_h}x{grid_w}")]
    OutOfBounds {
        origin: TileOrigin,
        h: usize,
        w: usize,
        grid_h: usize,
        grid_w: usize,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pixel ({row}, {col}) is not covered by any tile")]
    UncoveredPixel { row: usize, col: usize },

    #[error("tile origin {0} is not part of the tiling plan")]
    TileNotInPlan(TileOrigin),

    #[error("tile origin {0} supplied more than once")]
    DuplicateTile(TileOrigin),

    #[error("score {value} at index {index} is outside [0, 1]")]
    ScoreOutOfRange { value: f32, index: usize },

    #[error("no score map for tile {tile_id}: {path} not found")]
    MissingScoreFile { tile_id: String, path: String },

    #[error("remote scorer failed for tile {tile_id} after {attempts} attempt(s): {cause}")]
    Remote {
        tile_id: String,
        attempts: usize,
        cause: String,
    },

    #[error("malformed PFM data: {0}")]
    Pfm(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("label {0} does not fit in a 16-bit label image")]
    LabelOverflow(u32),

    #[error("instance pixel sets must be non-empty")]
    EmptyInstance,

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("tally has no entry for IoU threshold {0:.2}")]
    MissingThreshold(f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("placed only {placed} of {requested} instances after {attempts} attempts")]
    Placement {
        requested: usize,
        placed: usize,
        attempts: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input data or parameters rather than by
    /// the environment (files, network).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Remote { .. } | Error::MissingScoreFile { .. } | Error::Image(_)
        )
    }
}
