//! Binary dilation and erosion with discrete disks, and the per-instance
//! boundary map built from them.
//!
//! Pixels outside the image count as background for both operators, so
//! erosion eats a `radius`-wide frame along the image border.

use crate::grid::{BinaryMask, Grid, LabelMap, TileOrigin};

pub const DEFAULT_BOUNDARY_RADIUS: usize = 2;

/// Integer offsets `(dr, dc)` with `dr² + dc² <= radius²`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DiskElement {
    radius: usize,
    /// Half-width of the disk's column span for each `dr` in `-radius..=radius`.
    half_widths: Vec<usize>,
}

impl DiskElement {
    pub fn new(radius: usize) -> Self {
        let r = radius as i64;
        let half_widths = (-r..=r)
            .map(|dr| {
                let rem = r * r - dr * dr;
                let mut w = (rem as f64).sqrt() as i64;
                while (w + 1) * (w + 1) <= rem {
                    w += 1;
                }
                while w * w > rem {
                    w -= 1;
                }
                w as usize
            })
            .collect();
        Self {
            radius,
            half_widths,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// All member offsets, row-major.
    pub fn offsets(&self) -> Vec<(i64, i64)> {
        let r = self.radius as i64;
        self.half_widths
            .iter()
            .zip(-r..=r)
            .flat_map(|(&hw, dr)| {
                let hw = hw as i64;
                (-hw..=hw).map(move |dc| (dr, dc))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.half_widths.iter().map(|w| 2 * w + 1).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-row prefix counts of set pixels: `prefix[r][c]` counts columns `< c`.
fn row_prefix_counts(mask: &BinaryMask) -> Vec<u32> {
    let (h, w) = mask.dims();
    let mut prefix = vec![0u32; h * (w + 1)];
    for r in 0..h {
        let row = mask.row(r);
        let base = r * (w + 1);
        for c in 0..w {
            prefix[base + c + 1] = prefix[base + c] + u32::from(row[c]);
        }
    }
    prefix
}

/// For each output pixel and each disk row, counts the set pixels in that
/// row's horizontal span via prefix sums. Dilation needs one hit anywhere;
/// erosion needs every span fully inside the image and fully set.
fn sweep(mask: &BinaryMask, se: &DiskElement, dilation: bool) -> BinaryMask {
    let (h, w) = mask.dims();
    let prefix = row_prefix_counts(mask);
    let r = se.radius as i64;
    let mut out = vec![!dilation; h * w];
    for (k, &hw) in se.half_widths.iter().enumerate() {
        let dr = k as i64 - r;
        let hw = hw as i64;
        for row in 0..h as i64 {
            let src = row + dr;
            let out_row = &mut out[row as usize * w..(row as usize + 1) * w];
            if src < 0 || src >= h as i64 {
                if !dilation {
                    out_row.iter_mut().for_each(|v| *v = false);
                }
                continue;
            }
            let base = src as usize * (w + 1);
            for c in 0..w as i64 {
                let lo = (c - hw).max(0) as usize;
                let hi = (c + hw + 1).min(w as i64) as usize;
                let count = prefix[base + hi] - prefix[base + lo];
                if dilation {
                    if count > 0 {
                        out_row[c as usize] = true;
                    }
                } else {
                    let span_in = c - hw >= 0 && c + hw < w as i64;
                    if !span_in || count as i64 != 2 * hw + 1 {
                        out_row[c as usize] = false;
                    }
                }
            }
        }
    }
    Grid::from_vec(h, w, out).expect("output shape matches input")
}

pub fn dilate(mask: &BinaryMask, se: &DiskElement) -> BinaryMask {
    sweep(mask, se, true)
}

pub fn erode(mask: &BinaryMask, se: &DiskElement) -> BinaryMask {
    sweep(mask, se, false)
}

#[derive(Clone, Copy)]
struct BBox {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

pub(crate) fn label_bboxes(labels: &LabelMap) -> Vec<Option<(usize, usize, usize, usize)>> {
    let n = labels.max_label() as usize;
    let mut boxes: Vec<Option<BBox>> = vec![None; n + 1];
    for r in 0..labels.height() {
        for (c, &l) in labels.row(r).iter().enumerate() {
            if l == 0 {
                continue;
            }
            let b = boxes[l as usize].get_or_insert(BBox {
                r0: r,
                c0: c,
                r1: r,
                c1: c,
            });
            b.r0 = b.r0.min(r);
            b.c0 = b.c0.min(c);
            b.r1 = b.r1.max(r);
            b.c1 = b.c1.max(c);
        }
    }
    boxes
        .into_iter()
        .map(|b| b.map(|b| (b.r0, b.c0, b.r1, b.c1)))
        .collect()
}

/// Union over instances of `dilate(mask_i) AND NOT erode(mask_i)`.
///
/// Each instance is processed inside its bounding box grown by `radius`
/// (clipped to the image), which is exact because the disk never reaches
/// further.
pub fn boundary_map(labels: &LabelMap, radius: usize) -> BinaryMask {
    let (h, w) = labels.dims();
    let se = DiskElement::new(radius);
    let mut out = Grid::filled(h, w, false);
    for (label, bbox) in label_bboxes(labels).into_iter().enumerate() {
        let Some((r0, c0, r1, c1)) = bbox else {
            continue;
        };
        let wr0 = r0.saturating_sub(radius);
        let wc0 = c0.saturating_sub(radius);
        let wr1 = (r1 + radius).min(h - 1);
        let wc1 = (c1 + radius).min(w - 1);
        let origin = TileOrigin::new(wr0, wc0);
        let (wh, ww) = (wr1 - wr0 + 1, wc1 - wc0 + 1);
        let window = labels.crop(origin, wh, ww).expect("window inside image");
        let local = window.map(|&l| l as usize == label);
        // A window edge that is not the image edge has only background
        // beyond it, so the local border policy matches the global one.
        let d = dilate(&local, &se);
        let e = erode(&local, &se);
        for r in 0..wh {
            for c in 0..ww {
                if *d.get(r, c) && !*e.get(r, c) {
                    out.set(wr0 + r, wc0 + c, true);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct(mask: &BinaryMask, se: &DiskElement, dilation: bool) -> BinaryMask {
        let (h, w) = mask.dims();
        let offs = se.offsets();
        Grid::from_fn(h, w, |r, c| {
            let hit = |&(dr, dc): &(i64, i64)| {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64 && *mask.get(rr as usize, cc as usize)
            };
            if dilation {
                offs.iter().any(hit)
            } else {
                offs.iter().all(hit)
            }
        })
    }

    #[test]
    fn disk_offsets() {
        let se = DiskElement::new(2);
        let offs = se.offsets();
        assert_eq!(offs.len(), 13);
        assert_eq!(se.len(), 13);
        for &(dr, dc) in &offs {
            assert!(dr * dr + dc * dc <= 4);
            assert!(offs.contains(&(-dr, -dc)));
            assert!(offs.contains(&(dc, dr)));
        }
        assert!(offs.contains(&(0, 0)));
        assert_eq!(DiskElement::new(1).len(), 5);
        assert_eq!(DiskElement::new(3).len(), 29);
    }

    #[test]
    fn dilate_single_pixel() {
        let mut m = Grid::filled(11, 11, false);
        m.set(5, 5, true);
        let d = dilate(&m, &DiskElement::new(2));
        assert_eq!(d.count_ones(), 13);
        assert!(*d.get(3, 5) && *d.get(4, 4) && !*d.get(3, 4));
    }

    #[test]
    fn dilate_trivial_masks() {
        let se = DiskElement::new(2);
        let empty = Grid::filled(7, 9, false);
        assert_eq!(dilate(&empty, &se), empty);
        let full = Grid::filled(7, 9, true);
        assert_eq!(dilate(&full, &se), full);
    }

    #[test]
    fn erode_full_mask_drops_border_band() {
        let full = Grid::filled(11, 11, true);
        let e = erode(&full, &DiskElement::new(2));
        for r in 0..11 {
            for c in 0..11 {
                let inside = (2..9).contains(&r) && (2..9).contains(&c);
                assert_eq!(*e.get(r, c), inside, "({r},{c})");
            }
        }
    }

    #[test]
    fn erode_single_pixel_vanishes() {
        let mut m = Grid::filled(11, 11, false);
        m.set(5, 5, true);
        assert_eq!(erode(&m, &DiskElement::new(2)).count_ones(), 0);
    }

    #[test]
    fn boundary_of_empty_map() {
        let l = Grid::filled(10, 10, 0u32);
        assert_eq!(boundary_map(&l, 2).count_ones(), 0);
    }

    #[test]
    fn boundary_of_square() {
        // 6x6 square at rows/cols 10..16 in a 30x30 image.
        let l = Grid::from_fn(30, 30, |r, c| u32::from((10..16).contains(&r) && (10..16).contains(&c)));
        let b = boundary_map(&l, 2);
        let mask = l.foreground();
        let se = DiskElement::new(2);
        let expect = Grid::from_fn(30, 30, |r, c| {
            *direct(&mask, &se, true).get(r, c) && !*direct(&mask, &se, false).get(r, c)
        });
        assert_eq!(b, expect);
        // interior 2x2 core is excluded, everything else of the square is band
        for r in 10..16 {
            for c in 10..16 {
                let core = (12..14).contains(&r) && (12..14).contains(&c);
                assert_eq!(*b.get(r, c), !core);
            }
        }
        // the band is symmetric under the square's symmetries
        for r in 0..26 {
            for c in 0..26 {
                assert_eq!(b.get(r, c), b.get(c, r));
                assert_eq!(b.get(r, c), b.get(25 - r, c));
            }
        }
        assert!(*b.get(8, 12) && !*b.get(7, 12));
    }

    #[test]
    fn gap_between_instances_is_boundary() {
        // columns 5..10 instance 1, column 10 gap, columns 11..16 instance 2
        let l = Grid::from_fn(20, 30, |r, c| {
            if !(5..15).contains(&r) {
                0
            } else if (5..10).contains(&c) {
                1
            } else if (11..16).contains(&c) {
                2
            } else {
                0
            }
        });
        let b = boundary_map(&l, 2);
        for r in 5..15 {
            assert!(*b.get(r, 10));
        }
    }

    #[test]
    fn boundary_frame_at_image_border() {
        let l = Grid::filled(9, 9, 1u32);
        let b = boundary_map(&l, 2);
        assert!(*b.get(0, 4) && *b.get(1, 4) && !*b.get(2, 4));
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (1usize..18, 1usize..18).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), h * w)
                .prop_map(move |v| Grid::from_vec(h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn sweep_matches_direct_evaluation(m in mask_strategy(), radius in 1usize..4) {
            let se = DiskElement::new(radius);
            prop_assert_eq!(dilate(&m, &se), direct(&m, &se, true));
            prop_assert_eq!(erode(&m, &se), direct(&m, &se, false));
        }

        #[test]
        fn closing_contains_original(m in mask_strategy(), radius in 1usize..4) {
            let se = DiskElement::new(radius);
            let closed = erode(&dilate(&m, &se), &se);
            // holds wherever the disk fits inside the image
            let (h, w) = m.dims();
            for r in radius..h.saturating_sub(radius) {
                for c in radius..w.saturating_sub(radius) {
                    prop_assert!(!*m.get(r, c) || *closed.get(r, c));
                }
            }
        }

        #[test]
        fn interior_duality(m in mask_strategy(), radius in 1usize..3) {
            let se = DiskElement::new(radius);
            let (h, w) = m.dims();
            let e = erode(&m, &se);
            let dual = dilate(&m.map(|b| !b), &se).map(|b| !b);
            for r in radius..h.saturating_sub(radius) {
                for c in radius..w.saturating_sub(radius) {
                    prop_assert_eq!(e.get(r, c), dual.get(r, c));
                }
            }
        }

        #[test]
        fn monotone(m in mask_strategy(), extra in any::<u64>(), radius in 1usize..3) {
            let se = DiskElement::new(radius);
            let mut bits = extra;
            let n = m.map(|&b| { bits = bits.rotate_left(7) ^ 0x9e37_79b9_7f4a_7c15; b || bits & 3 == 0 });
            let (dm, dn) = (dilate(&m, &se), dilate(&n, &se));
            let (em, en) = (erode(&m, &se), erode(&n, &se));
            for i in 0..m.len() {
                prop_assert!(!dm.as_slice()[i] || dn.as_slice()[i]);
                prop_assert!(!em.as_slice()[i] || en.as_slice()[i]);
            }
        }

        #[test]
        fn boundary_avoids_eroded_cores(
            vals in proptest::collection::vec(0u32..4, 16 * 16)
        ) {
            let l = Grid::from_vec(16, 16, vals).unwrap();
            let b = boundary_map(&l, 2);
            let se = DiskElement::new(2);
            for label in 1..4u32 {
                let core = erode(&l.map(|&v| v == label), &se);
                for i in 0..l.len() {
                    prop_assert!(!(core.as_slice()[i] && b.as_slice()[i]));
                }
            }
        }
    }
}
