//! Overlapping fixed-size tiling and class-specific stitching.
//!
//! Every tile has exactly the plan's tile shape. The last tile along an axis
//! is clamped to end at the image edge; images smaller than a tile along an
//! axis are reflect-padded up to the tile size before splitting and cropped
//! back after stitching.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScoreMap, TileOrigin};

pub const DEFAULT_TILE_SIZE: usize = 512;
pub const DEFAULT_OVERLAP: usize = 64;

/// How overlapping tile scores are fused into one value per pixel.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    /// Mean of contributing tiles; used for the cyst head.
    Average,
    /// Maximum of contributing tiles; used for the boundary head so that thin
    /// separating seams survive.
    Maximum,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TilingPlan {
    pub image_h: usize,
    pub image_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub overlap: usize,
    /// Tile origins in row-major order, expressed on the padded canvas.
    pub origins: Vec<TileOrigin>,
}

/// A tile cut from a larger grid.
#[derive(Clone, PartialEq, Debug)]
pub struct Tile<T> {
    pub origin: TileOrigin,
    pub grid: Grid<T>,
}

fn axis_positions(image: usize, tile: usize, stride: usize) -> Vec<usize> {
    if tile >= image {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        if pos + tile >= image {
            out.push(image - tile);
            break;
        }
        out.push(pos);
        pos += stride;
    }
    out
}

pub fn plan_tiling(
    image_h: usize,
    image_w: usize,
    tile_h: usize,
    tile_w: usize,
    overlap: usize,
) -> Result<TilingPlan> {
    if image_h == 0 || image_w == 0 || tile_h == 0 || tile_w == 0 {
        return Err(Error::InvalidParameter(format!(
            "image {image_h}x{image_w} and tile {tile_h}x{tile_w} must be non-empty"
        )));
    }
    if overlap >= tile_h.min(tile_w) {
        return Err(Error::InvalidParameter(format!(
            "overlap {overlap} must be smaller than tile {tile_h}x{tile_w}"
        )));
    }
    let rows = axis_positions(image_h, tile_h, tile_h - overlap);
    let cols = axis_positions(image_w, tile_w, tile_w - overlap);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| TileOrigin::new(r, c)))
        .collect();
    Ok(TilingPlan {
        image_h,
        image_w,
        tile_h,
        tile_w,
        overlap,
        origins,
    })
}

impl TilingPlan {
    /// Canvas the origins refer to: the image, grown to the tile size on any
    /// axis where the image is smaller.
    pub fn padded_dims(&self) -> (usize, usize) {
        (self.image_h.max(self.tile_h), self.image_w.max(self.tile_w))
    }

    pub fn needs_padding(&self) -> bool {
        self.padded_dims() != (self.image_h, self.image_w)
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Number of tiles covering each pixel of the image.
    pub fn coverage(&self) -> Grid<u32> {
        let (ph, pw) = self.padded_dims();
        let mut cov = Grid::filled(ph, pw, 0u32);
        for o in &self.origins {
            for r in o.row..o.row + self.tile_h {
                for c in o.col..o.col + self.tile_w {
                    let i = cov.index_of(r, c);
                    cov.as_mut_slice()[i] += 1;
                }
            }
        }
        cov.crop(TileOrigin::new(0, 0), self.image_h, self.image_w)
            .expect("image lies inside padded canvas")
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads `grid` at the bottom and right edges up to `h`x`w`.
pub fn reflect_pad<T: Clone>(grid: &Grid<T>, h: usize, w: usize) -> Grid<T> {
    let (gh, gw) = grid.dims();
    Grid::from_fn(h.max(gh), w.max(gw), |r, c| {
        grid.get(reflect(r, gh), reflect(c, gw)).clone()
    })
}

/// The `h`x`w` window at `origin` of the reflect-padded canvas, without
/// materialising the canvas.
pub fn crop_reflected<T: Clone>(grid: &Grid<T>, origin: TileOrigin, h: usize, w: usize) -> Grid<T> {
    let (gh, gw) = grid.dims();
    Grid::from_fn(h, w, |r, c| {
        grid.get(reflect(origin.row + r, gh), reflect(origin.col + c, gw))
            .clone()
    })
}

pub fn split<T: Clone>(map: &Grid<T>, plan: &TilingPlan) -> Result<Vec<Tile<T>>> {
    if map.dims() != (plan.image_h, plan.image_w) {
        return Err(Error::DimensionMismatch {
            expected: (plan.image_h, plan.image_w),
            found: map.dims(),
        });
    }
    let padded;
    let canvas = if plan.needs_padding() {
        let (ph, pw) = plan.padded_dims();
        padded = reflect_pad(map, ph, pw);
        &padded
    } else {
        map
    };
    plan.origins
        .iter()
        .map(|&origin| {
            Ok(Tile {
                origin,
                grid: canvas.crop(origin, plan.tile_h, plan.tile_w)?,
            })
        })
        .collect()
}

/// Fuses per-tile score maps into an image-level score map.
///
/// Tiles are accumulated in plan order whatever order they arrive in, so the
/// output is bitwise independent of the input permutation and of the number
/// of rayon workers. Rows of the output are filled in parallel.
pub fn stitch(tiles: &[Tile<f32>], plan: &TilingPlan, rule: FusionRule) -> Result<ScoreMap> {
    let index: HashMap<TileOrigin, usize> = plan
        .origins
        .iter()
        .enumerate()
        .map(|(i, &o)| (o, i))
        .collect();
    let mut ordered: Vec<Option<&Grid<f32>>> = vec![None; plan.origins.len()];
    for tile in tiles {
        if tile.grid.dims() != (plan.tile_h, plan.tile_w) {
            return Err(Error::DimensionMismatch {
                expected: (plan.tile_h, plan.tile_w),
                found: tile.grid.dims(),
            });
        }
        let slot = *index
            .get(&tile.origin)
            .ok_or(Error::TileNotInPlan(tile.origin))?;
        if ordered[slot].replace(&tile.grid).is_some() {
            return Err(Error::DuplicateTile(tile.origin));
        }
    }
    let present: Vec<(TileOrigin, &Grid<f32>)> = plan
        .origins
        .iter()
        .zip(&ordered)
        .filter_map(|(&o, g)| g.map(|g| (o, g)))
        .collect();

    let (h, w) = (plan.image_h, plan.image_w);
    let (tile_h, tile_w) = (plan.tile_h, plan.tile_w);
    let mut out = vec![0f32; h * w];
    let uncovered: Option<(usize, usize)> = out
        .par_chunks_mut(w)
        .enumerate()
        .map(|(r, row_out)| {
            let mut sum = vec![0f64; w];
            let mut max = vec![f32::NEG_INFINITY; w];
            let mut count = vec![0u32; w];
            for &(o, g) in &present {
                if r < o.row || r >= o.row + tile_h || o.col >= w {
                    continue;
                }
                let src = g.row(r - o.row);
                let end = (o.col + tile_w).min(w);
                for c in o.col..end {
                    let v = src[c - o.col];
                    match rule {
                        FusionRule::Average => sum[c] += f64::from(v),
                        FusionRule::Maximum => max[c] = max[c].max(v),
                    }
                    count[c] += 1;
                }
            }
            for c in 0..w {
                if count[c] == 0 {
                    return Some((r, c));
                }
                row_out[c] = match rule {
                    FusionRule::Average => (sum[c] / f64::from(count[c])) as f32,
                    FusionRule::Maximum => max[c],
                };
            }
            None
        })
        .reduce(
            || None,
            |a, b| match (a, b) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, None) => x,
                (None, y) => y,
            },
        );
    if let Some((row, col)) = uncovered {
        return Err(Error::UncoveredPixel { row, col });
    }
    Grid::from_vec(h, w, out)
}
