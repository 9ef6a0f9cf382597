//! Seeded synthetic scenes: elliptical cyst instances plus debris shapes.
//!
//! Debris never enters the ground-truth label map. It exists in the ledger,
//! in the optional rendered RGB image, and as the false-positive source of
//! the mock scorer.

use std::f64::consts::PI;

use image::{ImageBuffer, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap};

/// Minimal area of a generated cyst unless `allow_small` is set.
pub const MIN_CYST_AREA: usize = 500;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DebrisShape {
    #[default]
    Ellipse,
    Rectangle,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_cysts: usize,
    /// Inclusive range of cyst semi-axes in pixels.
    pub cyst_axes: (f64, f64),
    pub n_debris: usize,
    pub debris_axes: (f64, f64),
    pub debris_shape: DebrisShape,
    /// Minimal Euclidean distance between pixels of different shapes.
    pub min_gap: usize,
    pub seed: u64,
    /// Placement attempts per requested shape.
    pub attempts_per_shape: usize,
    pub allow_small: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 1024,
            width: 1024,
            n_cysts: 10,
            cyst_axes: (16.0, 40.0),
            n_debris: 0,
            debris_axes: (10.0, 30.0),
            debris_shape: DebrisShape::Ellipse,
            min_gap: 4,
            seed: 0,
            attempts_per_shape: 200,
            allow_small: false,
        }
    }
}

/// A placed shape. Coordinates are (row, col) with pixel centers on integers.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub label: u32,
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub angle: f64,
    pub area: usize,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct SceneLedger {
    pub instances: Vec<ShapeRecord>,
    pub debris: Vec<ShapeRecord>,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Scene {
    pub gt: LabelMap,
    pub ledger: SceneLedger,
    /// Debris pixels, labeled by debris index starting at 1.
    pub debris: LabelMap,
}

#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub kind: DebrisShape,
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub angle: f64,
}

impl Shape {
    /// Half extents of the axis-aligned bounding box.
    fn extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let [a, b] = self.axes;
        match self.kind {
            DebrisShape::Ellipse => (
                (a * a * s * s + b * b * c * c).sqrt(),
                (a * a * c * c + b * b * s * s).sqrt(),
            ),
            DebrisShape::Rectangle => (a * s.abs() + b * c.abs(), a * c.abs() + b * s.abs()),
        }
    }

    fn contains(&self, r: f64, c: f64) -> bool {
        let (dr, dc) = (r - self.center[0], c - self.center[1]);
        let (s, co) = self.angle.sin_cos();
        // major axis along direction (sin, cos) in (row, col)
        let u = dr * s + dc * co;
        let v = -dr * co + dc * s;
        let [a, b] = self.axes;
        match self.kind {
            DebrisShape::Ellipse => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            DebrisShape::Rectangle => u.abs() <= a && v.abs() <= b,
        }
    }

    /// Pixel indices whose centers lie inside the shape, clipped to the canvas.
    pub fn rasterize(&self, height: usize, width: usize) -> Vec<usize> {
        let (er, ec) = self.extents();
        let r0 = (self.center[0] - er).floor().max(0.0) as usize;
        let r1 = ((self.center[0] + er).ceil() as usize).min(height - 1);
        let c0 = (self.center[1] - ec).floor().max(0.0) as usize;
        let c1 = ((self.center[1] + ec).ceil() as usize).min(width - 1);
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if self.contains(r as f64, c as f64) {
                    out.push(r * width + c);
                }
            }
        }
        out
    }

    fn inside_canvas(&self, height: usize, width: usize) -> bool {
        let (er, ec) = self.extents();
        self.center[0] - er >= 0.0
            && self.center[1] - ec >= 0.0
            && self.center[0] + er <= (height - 1) as f64
            && self.center[1] + ec <= (width - 1) as f64
    }
}

/// Rejection-sampling placement with a minimal pixel gap between shapes.
pub struct Placer {
    height: usize,
    width: usize,
    gap: usize,
    /// Pixels closer than `gap` to an occupied pixel (or occupied).
    blocked: Vec<bool>,
    gap_offsets: Vec<(i64, i64)>,
}

impl Placer {
    pub fn new(height: usize, width: usize, min_gap: usize) -> Self {
        let g = min_gap as i64;
        let gap_offsets = (-g..=g)
            .flat_map(|dr| (-g..=g).map(move |dc| (dr, dc)))
            .filter(|&(dr, dc)| dr * dr + dc * dc < g * g || (dr == 0 && dc == 0))
            .collect();
        Self {
            height,
            width,
            gap: min_gap,
            blocked: vec![false; height * width],
            gap_offsets,
        }
    }

    pub fn min_gap(&self) -> usize {
        self.gap
    }

    pub fn occupy(&mut self, pixels: &[usize]) {
        let (h, w) = (self.height as i64, self.width as i64);
        for &p in pixels {
            let (r, c) = ((p / self.width) as i64, (p % self.width) as i64);
            for &(dr, dc) in &self.gap_offsets {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && rr < h && cc < w {
                    self.blocked[(rr * w + cc) as usize] = true;
                }
            }
        }
    }

    /// Rasterizes `shape` and claims its pixels when it fits; `None` when it
    /// leaves the canvas or comes closer than the gap to an occupied pixel.
    pub fn try_place(&mut self, shape: &Shape, min_area: usize) -> Option<Vec<usize>> {
        if !shape.inside_canvas(self.height, self.width) {
            return None;
        }
        let pixels = shape.rasterize(self.height, self.width);
        if pixels.len() < min_area.max(1) || pixels.iter().any(|&p| self.blocked[p]) {
            return None;
        }
        self.occupy(&pixels);
        Some(pixels)
    }
}

pub(crate) fn random_shape(
    rng: &mut impl Rng,
    kind: DebrisShape,
    axes: (f64, f64),
    height: usize,
    width: usize,
) -> Shape {
    let (lo, hi) = (axes.0.min(axes.1), axes.0.max(axes.1));
    let mut a = rng.random_range(lo..=hi);
    let mut b = rng.random_range(lo..=hi);
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    let angle = rng.random_range(0.0..PI);
    let center = [
        rng.random_range(0.0..=(height - 1) as f64),
        rng.random_range(0.0..=(width - 1) as f64),
    ];
    Shape {
        kind,
        center,
        axes: [a, b],
        angle,
    }
}

fn record(label: u32, shape: &Shape, area: usize) -> ShapeRecord {
    ShapeRecord {
        label,
        center: shape.center,
        axes: shape.axes,
        angle: shape.angle,
        area,
    }
}

pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::InvalidParameter("canvas must be non-empty".into()));
    }
    if !(spec.cyst_axes.0 > 0.0 && spec.cyst_axes.1 > 0.0)
        || !(spec.debris_axes.0 > 0.0 && spec.debris_axes.1 > 0.0)
    {
        return Err(Error::InvalidParameter("semi-axes must be positive".into()));
    }
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placer = Placer::new(h, w, spec.min_gap);
    let mut gt = vec![0u32; h * w];
    let mut ledger = SceneLedger::default();
    let min_area = if spec.allow_small { 1 } else { MIN_CYST_AREA };

    let budget = spec.attempts_per_shape.max(1) * spec.n_cysts.max(1);
    let mut attempts = 0;
    while ledger.instances.len() < spec.n_cysts {
        if attempts == budget {
            return Err(Error::Placement {
                requested: spec.n_cysts,
                placed: ledger.instances.len(),
                attempts,
            });
        }
        attempts += 1;
        let shape = random_shape(&mut rng, DebrisShape::Ellipse, spec.cyst_axes, h, w);
        if let Some(pixels) = placer.try_place(&shape, min_area) {
            let label = ledger.instances.len() as u32 + 1;
            for &p in &pixels {
                gt[p] = label;
            }
            ledger.instances.push(record(label, &shape, pixels.len()));
        }
    }

    let mut debris = vec![0u32; h * w];
    let budget = spec.attempts_per_shape.max(1) * spec.n_debris.max(1);
    let mut attempts = 0;
    while ledger.debris.len() < spec.n_debris {
        if attempts == budget {
            return Err(Error::Placement {
                requested: spec.n_debris,
                placed: ledger.debris.len(),
                attempts,
            });
        }
        attempts += 1;
        let shape = random_shape(&mut rng, spec.debris_shape, spec.debris_axes, h, w);
        if let Some(pixels) = placer.try_place(&shape, 1) {
            let label = ledger.debris.len() as u32 + 1;
            for &p in &pixels {
                debris[p] = label;
            }
            ledger.debris.push(record(label, &shape, pixels.len()));
        }
    }

    Ok(Scene {
        gt: Grid::from_vec(h, w, gt)?,
        ledger,
        debris: Grid::from_vec(h, w, debris)?,
    })
}

pub type RgbImage = ImageBuffer<Rgb<u8>, Vec<u8>>;

/// Flat-shaded rendering of a scene with mild seeded texture: light
/// background, brown cysts, grey-brown debris.
pub fn render(scene: &Scene, seed: u64) -> RgbImage {
    let (h, w) = scene.gt.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let jitter: i16 = rng.random_range(-8..=8);
            let base: [i16; 3] = if *scene.gt.get(r, c) != 0 {
                [122, 78, 38]
            } else if *scene.debris.get(r, c) != 0 {
                [110, 95, 80]
            } else {
                [214, 200, 170]
            };
            let px = base.map(|v| (v + jitter).clamp(0, 255) as u8);
            img.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cyst_area_matches_raster() {
        let spec = SceneSpec {
            height: 128,
            width: 128,
            n_cysts: 1,
            cyst_axes: (20.0, 20.0),
            seed: 3,
            ..Default::default()
        };
        let scene = generate(&spec).unwrap();
        assert_eq!(scene.gt.max_label(), 1);
        let area = scene.gt.as_slice().iter().filter(|&&l| l == 1).count();
        assert_eq!(scene.ledger.instances[0].area, area);
        assert!((area as f64 - PI * 400.0).abs() < 40.0);
    }

    #[test]
    fn axis_aligned_ellipse_raster() {
        let s = Shape {
            kind: DebrisShape::Ellipse,
            center: [50.0, 50.0],
            axes: [20.0, 10.0],
            angle: 0.0,
        };
        let px = s.rasterize(100, 100);
        let brute = (0..100)
            .flat_map(|r| (0..100).map(move |c| (r, c)))
            .filter(|&(r, c)| {
                let (dr, dc) = (r as f64 - 50.0, c as f64 - 50.0);
                (dc / 20.0).powi(2) + (dr / 10.0).powi(2) <= 1.0
            })
            .count();
        assert_eq!(px.len(), brute);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SceneSpec {
            height: 300,
            width: 300,
            n_cysts: 6,
            n_debris: 3,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SceneSpec { seed: 12, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().gt, generate(&other).unwrap().gt);
    }

    #[test]
    fn debris_stays_out_of_ground_truth() {
        let spec = SceneSpec {
            height: 400,
            width: 400,
            n_cysts: 5,
            n_debris: 5,
            debris_shape: DebrisShape::Rectangle,
            seed: 2,
            ..Default::default()
        };
        let scene = generate(&spec).unwrap();
        assert_eq!(scene.gt.max_label(), 5);
        assert_eq!(scene.ledger.debris.len(), 5);
        for (g, d) in scene.gt.as_slice().iter().zip(scene.debris.as_slice()) {
            assert!(*g == 0 || *d == 0);
        }
        for rec in &scene.ledger.debris {
            let n = scene.debris.as_slice().iter().filter(|&&l| l == rec.label).count();
            assert_eq!(n, rec.area);
        }
    }

    #[test]
    fn impossible_spec_reports_progress() {
        let spec = SceneSpec {
            height: 100,
            width: 100,
            n_cysts: 50,
            cyst_axes: (15.0, 15.0),
            attempts_per_shape: 20,
            ..Default::default()
        };
        match generate(&spec) {
            Err(Error::Placement { requested: 50, placed, .. }) => assert!(placed < 50),
            other => panic!("expected placement failure, got {other:?}"),
        }
    }

    #[test]
    fn small_cysts_need_opt_in() {
        let spec = SceneSpec {
            height: 100,
            width: 100,
            n_cysts: 2,
            cyst_axes: (4.0, 6.0),
            attempts_per_shape: 50,
            ..Default::default()
        };
        assert!(generate(&spec).is_err());
        let spec = SceneSpec { allow_small: true, ..spec };
        let scene = generate(&spec).unwrap();
        assert!(scene.ledger.instances.iter().all(|r| r.area < 500));
    }

    #[test]
    fn render_marks_classes() {
        let spec = SceneSpec {
            height: 120,
            width: 120,
            n_cysts: 1,
            n_debris: 1,
            seed: 5,
            ..Default::default()
        };
        let scene = generate(&spec).unwrap();
        let img = render(&scene, 1);
        let i = scene.gt.as_slice().iter().position(|&l| l != 0).unwrap();
        let px = img.get_pixel((i % 120) as u32, (i / 120) as u32);
        assert!(px.0[0] < 140);
        assert_eq!(render(&scene, 1), img);
    }
}
