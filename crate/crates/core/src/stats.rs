//! Phenotype and count-validation statistics: instance areas, histograms,
//! Pearson correlation, least-squares fits, and the k-sample
//! Anderson-Darling test.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LabelMap;

/// Default histogram bin width in pixels.
pub const DEFAULT_BIN_WIDTH: f64 = 250.0;

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct AreaSample {
    pub population_id: String,
    pub areas: Vec<u64>,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CountPair {
    pub sample_id: String,
    pub manual: u64,
    pub automatic: u64,
}

/// Pixel count of every nonzero label, in ascending label order.
pub fn instance_areas(labels: &LabelMap) -> Vec<u64> {
    let mut areas: BTreeMap<u32, u64> = BTreeMap::new();
    for &l in labels.as_slice() {
        if l != 0 {
            *areas.entry(l).or_default() += 1;
        }
    }
    areas.into_values().collect()
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("mean of an empty list".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 pairs, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Centered sums `(Sxx, Syy, Sxy)` and means.
fn centered(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (sxx, syy, sxy, mx, my)
}

/// Sample Pearson correlation, two-pass.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    paired(x, y)?;
    let (sxx, syy, sxy, _, _) = centered(x, y);
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    paired(x, y)?;
    let (sxx, _, sxy, mx, my) = centered(x, y);
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub center: f64,
    pub count: u64,
    pub density: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Contiguous bins from the one holding the minimum to the one holding
    /// the maximum; empty bins in between have density 0.
    pub bins: Vec<HistogramBin>,
    pub n: usize,
    pub mean: f64,
}

/// Bins `[k·w, (k+1)·w)`, density `count / (n·w)`.
pub fn histogram_density(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InsufficientData("histogram of an empty list".into()));
    }
    if !(bin_width >= 1.0 && bin_width.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bin width must be >= 1, got {bin_width}"
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite value {bad}")));
    }
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for &v in values {
        *counts.entry((v / bin_width).floor() as i64).or_default() += 1;
    }
    let lo = *counts.keys().next().expect("non-empty");
    let hi = *counts.keys().next_back().expect("non-empty");
    let n = values.len();
    let bins = (lo..=hi)
        .map(|k| {
            let count = counts.get(&k).copied().unwrap_or(0);
            let lower = k as f64 * bin_width;
            HistogramBin {
                lower,
                center: lower + bin_width / 2.0,
                count,
                density: count as f64 / (n as f64 * bin_width),
            }
        })
        .collect();
    Ok(Histogram {
        bin_width,
        bins,
        n,
        mean: mean(values)?,
    })
}

// ---------------------------------------------------------------------------
// Anderson-Darling k-sample test

/// How the p-value of [`ad_ksample`] is obtained.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum AdPValue {
    /// Limiting null distribution `Σ_j χ²_{k-1} / (j(j+1))`, evaluated by
    /// numerical inversion of its characteristic function.
    #[default]
    Asymptotic,
    /// Quadratic interpolation of `ln α` over the tabulated critical values
    /// where the statistic lies inside the table; asymptotic outside it.
    Interpolated,
    /// Share of seeded random relabelings whose statistic is at least the
    /// observed one, `(1 + hits) / (1 + resamples)`.
    Permutation { resamples: usize, seed: u64 },
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct AdResult {
    /// Unstandardized midrank statistic `A²akN`.
    pub a2akn: f64,
    /// Standardized statistic `(A²akN − (k−1)) / σN`.
    pub statistic: f64,
    pub p_value: f64,
}

/// Pooled ranks shared by every relabeling of the same data.
struct PooledRanks {
    n_total: usize,
    /// Group of each pooled observation, in sorted-value order.
    groups: Vec<usize>,
    /// Start offset into the sorted pool of each distinct value.
    starts: Vec<usize>,
    sizes: Vec<usize>,
}

impl PooledRanks {
    fn new(samples: &[Vec<f64>]) -> Result<Self> {
        let mut pool: Vec<(f64, usize)> = samples
            .iter()
            .enumerate()
            .flat_map(|(g, s)| s.iter().map(move |&v| (v, g)))
            .collect();
        if pool.iter().any(|(v, _)| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite observation".into()));
        }
        pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut starts = vec![0];
        for i in 1..pool.len() {
            if pool[i].0 != pool[i - 1].0 {
                starts.push(i);
            }
        }
        if starts.len() < 2 {
            return Err(Error::InsufficientData(
                "need more than one distinct observation".into(),
            ));
        }
        Ok(Self {
            n_total: pool.len(),
            groups: pool.into_iter().map(|(_, g)| g).collect(),
            starts,
            sizes: samples.iter().map(Vec::len).collect(),
        })
    }

    /// Midrank `A²akN` for the group assignment `groups` (sorted order).
    fn statistic(&self, groups: &[usize], scratch: &mut Vec<f64>) -> f64 {
        let k = self.sizes.len();
        let n = self.n_total as f64;
        // running count of each group strictly below the current value
        scratch.clear();
        scratch.resize(2 * k, 0.0);
        let (below, here) = scratch.split_at_mut(k);
        let mut total = 0.0;
        for (j, &start) in self.starts.iter().enumerate() {
            let end = self.starts.get(j + 1).copied().unwrap_or(self.n_total);
            let lj = (end - start) as f64;
            here.iter_mut().for_each(|h| *h = 0.0);
            for &g in &groups[start..end] {
                here[g] += 1.0;
            }
            let bj = start as f64 + lj / 2.0;
            let denom = bj * (n - bj) - n * lj / 4.0;
            for i in 0..k {
                let mij = below[i] + here[i] / 2.0;
                let ni = self.sizes[i] as f64;
                let d = n * mij - bj * ni;
                total += lj / n * d * d / denom / ni;
                below[i] += here[i];
            }
        }
        total * (n - 1.0) / n
    }
}

/// Finite-sample variance of `A²akN` under the null.
fn null_variance(sizes: &[usize]) -> f64 {
    let k = sizes.len() as f64;
    let n_total = sizes.iter().sum::<usize>();
    let n = n_total as f64;
    let hh: f64 = sizes.iter().map(|&s| 1.0 / s as f64).sum();
    let mut cs = 0.0;
    let mut g = 0.0;
    for t in 0..n_total - 2 {
        cs += 1.0 / (n_total - 1 - t) as f64;
        g += cs / (t + 2) as f64;
    }
    let h = cs + 1.0;
    let a = (4.0 * g - 6.0) * (k - 1.0) + (10.0 - 6.0 * g) * hh;
    let b = (2.0 * g - 4.0) * k * k + 8.0 * h * k + (2.0 * g - 14.0 * h - 4.0) * hh - 8.0 * h
        + 4.0 * g
        - 6.0;
    let c = (6.0 * h + 2.0 * g - 2.0) * k * k + (4.0 * h - 4.0 * g + 6.0) * k
        + (2.0 * h - 6.0) * hh
        + 4.0 * h;
    let d = (2.0 * h + 6.0) * k * k - 4.0 * h * k;
    (a * n.powi(3) + b * n * n + c * n + d) / ((n - 1.0) * (n - 2.0) * (n - 3.0))
}

/// Terms of the limiting series kept explicitly; the remainder enters as
/// its mean.
const LIMIT_TERMS: usize = 100;

/// `P(Σ_j λ_j χ²_m > x)` for `λ_j = 1/(j(j+1))`, via Imhof's inversion
/// formula.
fn limit_survival(x: f64, m: usize) -> f64 {
    let mf = m as f64;
    let x = x - mf / (LIMIT_TERMS + 1) as f64;
    if x <= 0.0 {
        return 1.0;
    }
    let lambdas: Vec<f64> = (1..=LIMIT_TERMS)
        .map(|j| 1.0 / (j * (j + 1)) as f64)
        .collect();
    let lambda_sum: f64 = lambdas.iter().sum();
    let integrand = |u: f64| -> f64 {
        if u == 0.0 {
            return 0.5 * (mf * lambda_sum - x);
        }
        let mut theta = -0.5 * x * u;
        let mut log_rho = 0.0;
        for &l in &lambdas {
            let lu = l * u;
            theta += 0.5 * mf * lu.atan();
            log_rho += 0.25 * mf * (lu * lu).ln_1p();
        }
        theta.sin() / (u * log_rho.exp())
    };
    let envelope = |u: f64| -> f64 {
        let log_rho: f64 = lambdas
            .iter()
            .map(|&l| 0.25 * mf * ((l * u) * (l * u)).ln_1p())
            .sum();
        1.0 / (u * log_rho.exp())
    };
    let omega = 0.5 * (mf * lambda_sum).max(x) + 1.0;
    let step = 2.0 * PI / omega / 64.0;
    // Simpson blocks of 64 panels until the integrand envelope is negligible
    let block = 64usize;
    let mut total = 0.0;
    let mut u0 = 0.0;
    let mut f0 = integrand(0.0);
    loop {
        let mut acc = 0.0;
        let mut prev = f0;
        for i in 0..block {
            let a = u0 + i as f64 * step;
            let mid = integrand(a + step / 2.0);
            let end = integrand(a + step);
            acc += prev + 4.0 * mid + end;
            prev = end;
        }
        total += acc * step / 6.0;
        u0 += block as f64 * step;
        f0 = prev;
        if u0 > 1.0 && envelope(u0) < 1e-13 || u0 > 1e6 {
            break;
        }
    }
    (0.5 + total / PI).clamp(0.0, 1.0)
}

fn asymptotic_p(statistic: f64, m: usize) -> f64 {
    let mf = m as f64;
    let sigma_inf = (2.0 * mf * (PI * PI - 9.0) / 3.0).sqrt();
    limit_survival(mf + statistic * sigma_inf, m)
}

/// Significance levels and critical-value coefficients
/// `t = b0 + b1/√m + b2/m` of the standardized statistic.
const ALPHA: [f64; 11] = [
    0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005, 0.00001,
];
const B0: [f64; 11] = [
    0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085, 3.291, 3.719, 3.891, 4.265,
];
const B1: [f64; 11] = [
    -0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615, 4.224, 5.807, 6.499, 8.2,
];
const B2: [f64; 11] = [
    -0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154, -0.039, 0.307, 0.482, 0.934,
];

pub fn critical_values(m: usize) -> [f64; 11] {
    let mf = m as f64;
    std::array::from_fn(|i| B0[i] + B1[i] / mf.sqrt() + B2[i] / mf)
}

/// Least-squares quadratic through `(t_i, ln α_i)`.
fn quadratic_fit(t: &[f64; 11]) -> [f64; 3] {
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (ti, ai) in t.iter().zip(ALPHA) {
        let row = [1.0, *ti, ti * ti];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r] * ai.ln();
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&a, &b| ata[a][col].abs().total_cmp(&ata[b][col].abs()))
            .expect("non-empty");
        ata.swap(col, piv);
        atb.swap(col, piv);
        for r in col + 1..3 {
            let f = ata[r][col] / ata[col][col];
            for c in col..3 {
                ata[r][c] -= f * ata[col][c];
            }
            atb[r] -= f * atb[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| ata[r][c] * x[c]).sum();
        x[r] = (atb[r] - s) / ata[r][r];
    }
    x
}

fn interpolated_p(statistic: f64, m: usize) -> f64 {
    let t = critical_values(m);
    if statistic < t[0] || statistic > t[10] {
        return asymptotic_p(statistic, m);
    }
    let [c0, c1, c2] = quadratic_fit(&t);
    (c0 + c1 * statistic + c2 * statistic * statistic).exp().min(1.0)
}

fn permutation_p(ranks: &PooledRanks, observed: f64, resamples: usize, seed: u64) -> Result<f64> {
    if resamples == 0 {
        return Err(Error::InvalidParameter("permutation needs resamples >= 1".into()));
    }
    let tol = 1e-12 * observed.abs().max(1.0);
    let hits: usize = (0..resamples)
        .into_par_iter()
        .map_init(
            || (ranks.groups.clone(), Vec::new()),
            |(groups, scratch), r| {
                // one independent stream per resample index
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                groups.copy_from_slice(&ranks.groups);
                groups.shuffle(&mut rng);
                usize::from(ranks.statistic(groups, scratch) >= observed - tol)
            },
        )
        .sum();
    Ok((hits + 1) as f64 / (resamples + 1) as f64)
}

/// Pooled ranks, `A²akN`, and the standardized statistic.
fn ad_statistic(samples: &[Vec<f64>]) -> Result<(PooledRanks, f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "sample {i} has {} observation(s), need at least 2",
            s.len()
        )));
    }
    let ranks = PooledRanks::new(samples)?;
    let a2akn = ranks.statistic(&ranks.groups, &mut Vec::new());
    let var = null_variance(&ranks.sizes);
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("A2akN null variance"));
    }
    let statistic = (a2akn - (samples.len() - 1) as f64) / var.sqrt();
    Ok((ranks, a2akn, statistic))
}

/// k-sample Anderson-Darling test, midrank (tie-adjusted) statistic.
pub fn ad_ksample(samples: &[Vec<f64>], method: AdPValue) -> Result<AdResult> {
    let (ranks, a2akn, statistic) = ad_statistic(samples)?;
    let m = samples.len() - 1;
    let p_value = match method {
        AdPValue::Asymptotic => asymptotic_p(statistic, m),
        AdPValue::Interpolated => interpolated_p(statistic, m),
        AdPValue::Permutation { resamples, seed } => permutation_p(&ranks, a2akn, resamples, seed)?,
    };
    Ok(AdResult {
        a2akn,
        statistic,
        p_value,
    })
}

/// [`ad_ksample`] over area populations.
pub fn ad_ksample_areas(samples: &[AreaSample], method: AdPValue) -> Result<AdResult> {
    let data: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.areas.iter().map(|&a| a as f64).collect())
        .collect();
    ad_ksample(&data, method)
}
