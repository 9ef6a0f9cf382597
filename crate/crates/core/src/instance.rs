//! Turns stitched cyst/boundary score maps into an instance label map.
//!
//! Steps, in order: threshold both heads, drop cyst pixels that are also
//! boundary pixels, label connected components, hand the dropped ("orphan")
//! cyst pixels to the nearest instance, then discard instances below the
//! minimal size.

use serde::{Deserialize, Serialize};

use crate::distance::{squared_distance_transform, UNREACHABLE};
use crate::error::{Error, Result};
use crate::grid::{compact_labels, BinaryMask, Grid, LabelMap, ScoreMap};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            other => Err(Error::InvalidParameter(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }

    pub fn neighbors(self) -> u32 {
        match self {
            Self::Four => 4,
            Self::Eight => 8,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PipelineParams {
    pub cyst_threshold: f32,
    pub boundary_threshold: f32,
    pub min_size: usize,
    pub connectivity: Connectivity,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            cyst_threshold: 0.5,
            boundary_threshold: 0.5,
            min_size: 500,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("cyst threshold", self.cyst_threshold),
            ("boundary threshold", self.boundary_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {t}"
                )));
            }
        }
        if self.min_size == 0 {
            return Err(Error::InvalidParameter("min size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `score >= threshold`.
pub fn binarize(scores: &ScoreMap, threshold: f32) -> BinaryMask {
    scores.map(|&s| s >= threshold)
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let up = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labeling. Labels are `1..=N` in order of each
/// component's first pixel in a row-major scan.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (h, w) = mask.dims();
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSet::new();
    for r in 0..h {
        for c in 0..w {
            if !*mask.get(r, c) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut look = |rr: usize, cc: usize| {
                let l = provisional[rr * w + cc];
                if l != 0 {
                    neighbors[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                look(r, c - 1);
            }
            if r > 0 {
                look(r - 1, c);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        look(r - 1, c - 1);
                    }
                    if c + 1 < w {
                        look(r - 1, c + 1);
                    }
                }
            }
            let label = if n == 0 {
                sets.make()
            } else {
                let mut root = neighbors[0];
                for &other in &neighbors[1..n] {
                    root = sets.union(root, other);
                }
                root
            };
            provisional[r * w + c] = label;
        }
    }
    let mut final_id = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    for l in provisional.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if final_id[root] == 0 {
            next += 1;
            final_id[root] = next;
        }
        *l = final_id[root];
    }
    Grid::from_vec(h, w, provisional).expect("shape preserved")
}

/// Labels the components of `cyst AND NOT boundary`.
pub fn separate_and_label(
    cyst: &BinaryMask,
    boundary: &BinaryMask,
    connectivity: Connectivity,
) -> Result<LabelMap> {
    cyst.ensure_same_dims(boundary)?;
    let (h, w) = cyst.dims();
    let core: Vec<bool> = cyst
        .as_slice()
        .iter()
        .zip(boundary.as_slice())
        .map(|(&c, &b)| c && !b)
        .collect();
    let core = Grid::from_vec(h, w, core)?;
    Ok(label_components(&core, connectivity))
}

fn isqrt(n: u64) -> u64 {
    let mut x = (n as f64).sqrt() as u64;
    while x * x > n {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= n {
        x += 1;
    }
    x
}

/// Gives every unlabeled cyst pixel the label of its nearest labeled pixel
/// (Euclidean). Among equidistant labeled pixels the smallest label wins.
///
/// Distances are measured to the input instances only, so the result does
/// not depend on the order orphans are visited. When the map has no
/// instances at all, the orphans are labeled as fresh 8-connected
/// components instead.
pub fn merge_orphans(labels: &LabelMap, cyst: &BinaryMask) -> Result<LabelMap> {
    labels.ensure_same_dims(cyst)?;
    let (h, w) = labels.dims();
    let orphans: Vec<usize> = cyst
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .enumerate()
        .filter(|(_, (&c, &l))| c && l == 0)
        .map(|(i, _)| i)
        .collect();
    if orphans.is_empty() {
        return Ok(labels.clone());
    }
    if labels.as_slice().iter().all(|&l| l == 0) {
        let only = cyst.map(|&c| c);
        return Ok(label_components(&only, Connectivity::Eight));
    }

    let dist = squared_distance_transform(&labels.foreground());
    let mut out = labels.clone();
    for &i in &orphans {
        let d2 = dist.as_slice()[i];
        debug_assert_ne!(d2, UNREACHABLE);
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        let reach = isqrt(d2) as i64;
        let mut best = u32::MAX;
        for dr in -reach..=reach {
            let rem = d2 - (dr * dr) as u64;
            let dc = isqrt(rem) as i64;
            if (dc * dc) as u64 != rem {
                continue;
            }
            let rr = r + dr;
            if rr < 0 || rr >= h as i64 {
                continue;
            }
            for cc in [c - dc, c + dc] {
                if cc >= 0 && cc < w as i64 {
                    let l = *labels.get(rr as usize, cc as usize);
                    if l != 0 {
                        best = best.min(l);
                    }
                }
            }
        }
        debug_assert_ne!(best, u32::MAX);
        out.as_mut_slice()[i] = best;
    }
    Ok(out)
}

/// Sets instances with fewer than `min_size` pixels to background and
/// compacts the survivors.
pub fn filter_small(labels: &LabelMap, min_size: usize) -> LabelMap {
    let compact = compact_labels(labels);
    let mut areas = vec![0usize; compact.max_label() as usize + 1];
    for &l in compact.as_slice() {
        areas[l as usize] += 1;
    }
    let kept = compact.map(|&l| if l != 0 && areas[l as usize] >= min_size { l } else { 0 });
    compact_labels(&kept)
}

pub fn segment(
    cyst_scores: &ScoreMap,
    boundary_scores: &ScoreMap,
    params: &PipelineParams,
) -> Result<LabelMap> {
    params.validate()?;
    cyst_scores.ensure_same_dims(boundary_scores)?;
    let cyst = binarize(cyst_scores, params.cyst_threshold);
    let boundary = binarize(boundary_scores, params.boundary_threshold);
    let labels = separate_and_label(&cyst, &boundary, params.connectivity)?;
    let merged = merge_orphans(&labels, &cyst)?;
    Ok(filter_small(&merged, params.min_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        Grid::from_fn(h, w, |r, c| rows[r].as_bytes()[c] == b'#')
    }

    fn labels(rows: &[&[u32]]) -> LabelMap {
        let h = rows.len();
        let w = rows[0].len();
        Grid::from_fn(h, w, |r, c| rows[r][c])
    }

    #[test]
    fn binarize_is_inclusive() {
        let s = Grid::from_vec(1, 3, vec![0.49f32, 0.5, 0.51]).unwrap();
        assert_eq!(binarize(&s, 0.5).as_slice(), &[false, true, true]);
        assert_eq!(binarize(&Grid::filled(2, 2, 0.0), 0.5).count_ones(), 0);
        assert_eq!(binarize(&Grid::filled(2, 2, 1.0), 0.5).count_ones(), 4);
    }

    #[test]
    fn params_validation() {
        assert!(PipelineParams::default().validate().is_ok());
        let bad = PipelineParams {
            cyst_threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineParams {
            min_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(Connectivity::from_neighbors(6).is_err());
    }

    #[test]
    fn one_blob_one_label() {
        let c = mask(&["....", ".##.", ".##.", "...."]);
        let b = Grid::filled(4, 4, false);
        let l = separate_and_label(&c, &b, Connectivity::Eight).unwrap();
        assert_eq!(l.max_label(), 1);
        assert_eq!(l.foreground(), c);
    }

    #[test]
    fn boundary_line_bisects_blob() {
        let c = mask(&["#####", "#####", "#####"]);
        let b = mask(&["..#..", "..#..", "..#.."]);
        let l = separate_and_label(&c, &b, Connectivity::Eight).unwrap();
        assert_eq!(l.max_label(), 2);
        assert_eq!(*l.get(0, 0), 1);
        assert_eq!(*l.get(0, 4), 2);
        assert_eq!(*l.get(1, 2), 0);
    }

    #[test]
    fn diagonal_connectivity() {
        let c = mask(&["#.", ".#"]);
        let b = Grid::filled(2, 2, false);
        assert_eq!(separate_and_label(&c, &b, Connectivity::Eight).unwrap().max_label(), 1);
        assert_eq!(separate_and_label(&c, &b, Connectivity::Four).unwrap().max_label(), 2);
    }

    #[test]
    fn labels_follow_first_pixel_order() {
        // The U shape's right arm appears first on row 0 only after the left
        // arm; merging at the bottom must not disturb first-appearance order.
        let c = mask(&["#.#.#", "#.#..", "###.."]);
        let l = label_components(&c, Connectivity::Four);
        assert_eq!(*l.get(0, 0), 1);
        assert_eq!(*l.get(0, 2), 1);
        assert_eq!(*l.get(0, 4), 2);
    }

    #[test]
    fn mismatched_dims() {
        let c = Grid::filled(2, 3, true);
        let b = Grid::filled(3, 2, false);
        assert!(matches!(
            separate_and_label(&c, &b, Connectivity::Eight),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn orphan_adjacent_to_one_instance() {
        let l = labels(&[&[1, 1, 0, 0, 0]]);
        let c = mask(&["###.."]);
        let m = merge_orphans(&l, &c).unwrap();
        assert_eq!(m.as_slice(), &[1, 1, 1, 0, 0]);
    }

    #[test]
    fn equidistant_orphan_takes_smaller_label() {
        // orphan at column 2, instance 2 at column 0, instance 1 at column 4
        let l = labels(&[&[2, 0, 0, 0, 1]]);
        let c = mask(&["..#.."]);
        let m = merge_orphans(&l, &c).unwrap();
        assert_eq!(*m.get(0, 2), 1);
    }

    #[test]
    fn orphans_do_not_chain() {
        // Column 3 is closer to the orphan at column 2 than instance 2 is,
        // but only original instances count.
        let l = labels(&[&[1, 0, 0, 0, 0, 0, 2]]);
        let c = mask(&["#######"]);
        let m = merge_orphans(&l, &c).unwrap();
        assert_eq!(m.as_slice(), &[1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn no_orphans_is_identity() {
        let l = labels(&[&[1, 0, 2]]);
        let c = mask(&["#.#"]);
        assert_eq!(merge_orphans(&l, &c).unwrap(), l);
    }

    #[test]
    fn orphans_without_instances_become_components() {
        let l = Grid::filled(3, 5, 0u32);
        let c = mask(&["##...", ".....", "...##"]);
        let m = merge_orphans(&l, &c).unwrap();
        assert_eq!(m.max_label(), 2);
        assert_eq!(m.foreground(), c);
    }

    #[test]
    fn size_filter_is_strict_below() {
        let l = Grid::from_fn(40, 40, |r, c| {
            let i = r * 40 + c;
            if i < 499 {
                1
            } else if (600..1100).contains(&i) {
                7
            } else {
                0
            }
        });
        let f = filter_small(&l, 500);
        assert_eq!(f.max_label(), 1);
        assert_eq!(*f.get(0, 0), 0);
        assert_eq!(f.as_slice().iter().filter(|&&v| v == 1).count(), 500);
        let empty = Grid::filled(4, 4, 0u32);
        assert_eq!(filter_small(&empty, 500), empty);
    }

    #[test]
    fn segment_background_only() {
        let z = Grid::filled(16, 16, 0.0f32);
        let l = segment(&z, &z, &PipelineParams::default()).unwrap();
        assert_eq!(l.max_label(), 0);
    }

    #[test]
    fn segment_composes_steps() {
        // Two 30x30 squares joined by a 1-px bridge; boundary cuts the bridge.
        let cyst = Grid::from_fn(40, 80, |r, c| {
            let a = (5..35).contains(&r) && (5..35).contains(&c);
            let b = (5..35).contains(&r) && (40..70).contains(&c);
            let bridge = r == 20 && (35..40).contains(&c);
            if a || b || bridge { 1.0f32 } else { 0.0 }
        });
        let boundary = Grid::from_fn(40, 80, |_, c| if c == 37 { 0.9f32 } else { 0.1 });
        let params = PipelineParams::default();
        let l = segment(&cyst, &boundary, &params).unwrap();
        assert_eq!(l.max_label(), 2);
        // the cut bridge pixel is merged back into the nearer square
        assert_ne!(*l.get(20, 37), 0);
        assert_eq!(l.foreground(), binarize(&cyst, 0.5));
    }
}
