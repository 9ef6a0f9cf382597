//! Exact squared Euclidean distance transform (separable lower-envelope
//! method) on integer coordinates.
//!
//! Parabola intersections are kept as exact rationals so ties never depend
//! on floating-point rounding.

use rayon::prelude::*;

use crate::grid::{BinaryMask, Grid};

/// Marks pixels with no source at all.
pub const UNREACHABLE: u64 = u64::MAX;

/// A rational `num / den` with `den > 0`, or negative infinity.
#[derive(Clone, Copy)]
enum Bound {
    NegInf,
    At(i128, i128),
}

impl Bound {
    fn le(self, other: Bound) -> bool {
        match (self, other) {
            (Bound::NegInf, _) => true,
            (_, Bound::NegInf) => false,
            (Bound::At(a, b), Bound::At(c, d)) => a * d <= c * b,
        }
    }

    fn lt_int(self, q: i128) -> bool {
        match self {
            Bound::NegInf => true,
            Bound::At(n, d) => n < q * d,
        }
    }
}

/// `out[q] = min_p (q - p)² + f[p]` over finite `f[p]`.
fn transform_1d(f: &[u64], out: &mut [u64], v: &mut Vec<usize>, z: &mut Vec<Bound>) {
    v.clear();
    z.clear();
    let val = |p: usize| f[p] as i128 + (p as i128) * (p as i128);
    for (q, &fq) in f.iter().enumerate() {
        if fq == UNREACHABLE {
            continue;
        }
        if v.is_empty() {
            v.push(q);
            z.push(Bound::NegInf);
            continue;
        }
        loop {
            let p = *v.last().unwrap();
            let s = Bound::At(val(q) - val(p), 2 * (q as i128 - p as i128));
            if s.le(*z.last().unwrap()) {
                v.pop();
                z.pop();
                if v.is_empty() {
                    v.push(q);
                    z.push(Bound::NegInf);
                    break;
                }
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = UNREACHABLE);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1].lt_int(q as i128) {
            k += 1;
        }
        let d = q as i128 - v[k] as i128;
        *o = (d * d) as u64 + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest `true` pixel of
/// `sources`; [`UNREACHABLE`] when `sources` is empty.
pub fn squared_distance_transform(sources: &BinaryMask) -> Grid<u64> {
    let (h, w) = sources.dims();
    // columns first, stored column-major
    let mut cols = vec![0u64; h * w];
    cols.par_chunks_mut(h).enumerate().for_each_init(
        || (vec![0u64; h], Vec::new(), Vec::new()),
        |(f, v, z), (c, out)| {
            for r in 0..h {
                f[r] = if *sources.get(r, c) { 0 } else { UNREACHABLE };
            }
            transform_1d(f, out, v, z);
        },
    );
    let mut result = vec![0u64; h * w];
    result.par_chunks_mut(w).enumerate().for_each_init(
        || (vec![0u64; w], Vec::new(), Vec::new()),
        |(f, v, z), (r, out)| {
            for c in 0..w {
                f[c] = cols[c * h + r];
            }
            transform_1d(f, out, v, z);
        },
    );
    Grid::from_vec(h, w, result).expect("shape preserved")
}
