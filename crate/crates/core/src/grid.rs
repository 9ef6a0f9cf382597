//! Dense row-major rasters shared by every stage of the pipeline.
//!
//! Row-major order is also the canonical scan order: every "first" or
//! "smallest position" tie-break downstream refers to it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2-D grid stored row-major.
#[derive(Clone, PartialEq, Debug)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Per-pixel class confidences in `[0, 1]`.
pub type ScoreMap = Grid<f32>;
/// Thresholded or morphological operand.
pub type BinaryMask = Grid<bool>;
/// Instance identifiers, `0` is background.
pub type LabelMap = Grid<u32>;
/// Row-major RGB raster.
pub type RgbGrid = Grid<[u8; 3]>;

/// Top-left corner of a window inside a larger grid.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct TileOrigin {
    pub row: usize,
    pub col: usize,
}

impl TileOrigin {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for TileOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; grids have at least one pixel.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Copy of the `h`x`w` window whose top-left corner is `origin`.
    pub fn crop(&self, origin: TileOrigin, h: usize, w: usize) -> Result<Self> {
        self.check_window(origin, h, w)?;
        let mut data = Vec::with_capacity(h * w);
        for r in origin.row..origin.row + h {
            let start = r * self.width + origin.col;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }

    /// Returns a copy of `self` with `patch` written at `origin`.
    pub fn paste(&self, patch: &Grid<T>, origin: TileOrigin) -> Result<Self> {
        self.check_window(origin, patch.height, patch.width)?;
        let mut out = self.clone();
        for r in 0..patch.height {
            let start = (origin.row + r) * self.width + origin.col;
            out.data[start..start + patch.width].clone_from_slice(patch.row(r));
        }
        Ok(out)
    }

    fn check_window(&self, origin: TileOrigin, h: usize, w: usize) -> Result<()> {
        if h == 0
            || w == 0
            || origin.row + h > self.height
            || origin.col + w > self.width
        {
            return Err(Error::OutOfBounds {
                origin,
                h,
                w,
                grid_h: self.height,
                grid_w: self.width,
            });
        }
        Ok(())
    }
}

impl ScoreMap {
    /// Checks that every score lies in `[0, 1]` (NaN is rejected).
    pub fn validate_scores(&self) -> Result<()> {
        match self
            .data
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            Some(index) => Err(Error::ScoreOutOfRange {
                value: self.data[index],
                index,
            }),
            None => Ok(()),
        }
    }
}

impl BinaryMask {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl LabelMap {
    /// Largest label present (0 for an all-background map).
    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Foreground indicator.
    pub fn foreground(&self) -> BinaryMask {
        self.map(|&l| l != 0)
    }
}

/// Renumbers nonzero labels to `1..=N` in order of first appearance in a
/// row-major scan. Background stays 0.
pub fn compact_labels(labels: &LabelMap) -> LabelMap {
    let mut remap = std::collections::HashMap::new();
    let mut next = 0u32;
    labels.map(|&l| {
        if l == 0 {
            0
        } else {
            *remap.entry(l).or_insert_with(|| {
                next += 1;
                next
            })
        }
    })
}
