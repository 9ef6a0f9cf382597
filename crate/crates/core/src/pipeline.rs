//! Whole-image inference: plan tiles, score them in parallel, stitch the two
//! heads, and extract instances.

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{LabelMap, RgbGrid, TileOrigin};
use crate::instance::{segment, PipelineParams};
use crate::scorer::{HeadScores, ScoreProvider, TileRequest};
use crate::tiler::{plan_tiling, split, stitch, FusionRule, Tile, TilingPlan};

pub fn tile_id(image_id: &str, origin: TileOrigin) -> String {
    format!("{image_id}@{}_{}", origin.row, origin.col)
}

/// Scores every tile of `plan` and stitches cyst scores with averaging and
/// boundary scores with the maximum.
pub fn score_image(
    provider: &dyn ScoreProvider,
    image_id: &str,
    plan: &TilingPlan,
    rgb: Option<&RgbGrid>,
) -> Result<HeadScores> {
    let rgb_tiles = rgb.map(|img| split(img, plan)).transpose()?;
    let scored: Vec<(Tile<f32>, Tile<f32>)> = plan
        .origins
        .par_iter()
        .enumerate()
        .map(|(i, &origin)| {
            let id = tile_id(image_id, origin);
            let request = TileRequest {
                tile_id: &id,
                origin,
                height: plan.tile_h,
                width: plan.tile_w,
                rgb: rgb_tiles.as_ref().map(|t| &t[i].grid),
            };
            let s = provider.score_tile(&request)?;
            Ok((
                Tile { origin, grid: s.cyst },
                Tile { origin, grid: s.boundary },
            ))
        })
        .collect::<Result<_>>()?;
    let (cyst_tiles, boundary_tiles): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    Ok(HeadScores {
        cyst: stitch(&cyst_tiles, plan, FusionRule::Average)?,
        boundary: stitch(&boundary_tiles, plan, FusionRule::Maximum)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tiling {
    pub tile_size: usize,
    pub overlap: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self {
            tile_size: crate::tiler::DEFAULT_TILE_SIZE,
            overlap: crate::tiler::DEFAULT_OVERLAP,
        }
    }
}

pub fn process_image(
    provider: &dyn ScoreProvider,
    image_id: &str,
    dims: (usize, usize),
    rgb: Option<&RgbGrid>,
    tiling: Tiling,
    params: &PipelineParams,
) -> Result<LabelMap> {
    params.validate()?;
    let plan = plan_tiling(dims.0, dims.1, tiling.tile_size, tiling.tile_size, tiling.overlap)?;
    let scores = score_image(provider, image_id, &plan, rgb)?;
    segment(&scores.cyst, &scores.boundary, params)
}
