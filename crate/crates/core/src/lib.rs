//! Tiled score-map stitching, instance extraction, instance-level metrics,
//! and phenotype statistics for cyst segmentation in microscopy images.

pub mod distance;
pub mod error;
pub mod grid;
pub mod instance;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod pipeline;
pub mod scorer;
pub mod stats;
pub mod synthgen;
pub mod tiler;

pub use error::{Error, Result};
pub use grid::{BinaryMask, Grid, LabelMap, RgbGrid, ScoreMap, TileOrigin};
pub use instance::{segment, Connectivity, PipelineParams};
pub use tiler::{plan_tiling, split, stitch, FusionRule, TilingPlan};
