//! Instance matching and dataset-pooled detection metrics.
//!
//! IoU comparisons are made on exact integer ratios. Thresholds are held in
//! hundredths so that "IoU ≥ τ" is `100·|A∩B| ≥ τ₁₀₀·|A∪B|` with no rounding.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::LabelMap;

/// The ten thresholds 0.50, 0.55, …, 0.95 in hundredths.
pub const STANDARD_THRESHOLDS: [u32; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

/// A sorted, duplicate-free set of flat pixel indices.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PixelSet(Vec<usize>);

impl PixelSet {
    pub fn new(mut pixels: Vec<usize>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self(pixels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn intersection_len(&self, other: &PixelSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Pixel sets of every nonzero label, keyed by label.
pub fn instance_pixels(labels: &LabelMap) -> BTreeMap<u32, PixelSet> {
    let mut sets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.as_slice().iter().enumerate() {
        if l != 0 {
            sets.entry(l).or_default().push(i);
        }
    }
    sets.into_iter().map(|(l, v)| (l, PixelSet(v))).collect()
}

pub fn iou(a: &PixelSet, b: &PixelSet) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let inter = a.intersection_len(b);
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// `inter / union` kept as integers.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub struct Overlap {
    pub intersection: u64,
    pub union: u64,
}

impl Overlap {
    pub fn iou(self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }

    /// Exact `iou ≥ tau/100`.
    pub fn reaches(self, tau_hundredths: u32) -> bool {
        u128::from(self.intersection) * 100 >= u128::from(tau_hundredths) * u128::from(self.union)
    }

    fn cmp_iou(self, other: Overlap) -> Ordering {
        (u128::from(self.intersection) * u128::from(other.union))
            .cmp(&(u128::from(other.intersection) * u128::from(self.union)))
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct InstanceMatch {
    pub pred_label: u32,
    pub gt_label: Option<u32>,
    pub iou: f64,
    /// Intersection and union with `gt_label`; zero when unmatched.
    pub overlap: Overlap,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize)]
pub struct ImageMatches {
    /// One entry per prediction, ascending `pred_label`.
    pub matches: Vec<InstanceMatch>,
    /// Ground-truth labels no prediction matched, ascending.
    pub unmatched_gt: Vec<u32>,
    pub n_gt: usize,
}

impl ImageMatches {
    pub fn n_pred(&self) -> usize {
        self.matches.len()
    }
}

/// Areas per label and intersection counts per overlapping (pred, gt) pair.
struct Overlaps {
    pred_area: BTreeMap<u32, u64>,
    gt_area: BTreeMap<u32, u64>,
    pairs: HashMap<(u32, u32), u64>,
}

fn overlaps(pred: &LabelMap, gt: &LabelMap) -> Result<Overlaps> {
    pred.ensure_same_dims(gt)?;
    let mut o = Overlaps {
        pred_area: BTreeMap::new(),
        gt_area: BTreeMap::new(),
        pairs: HashMap::new(),
    };
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if p != 0 {
            *o.pred_area.entry(p).or_default() += 1;
        }
        if g != 0 {
            *o.gt_area.entry(g).or_default() += 1;
        }
        if p != 0 && g != 0 {
            *o.pairs.entry((p, g)).or_default() += 1;
        }
    }
    Ok(o)
}

impl Overlaps {
    fn overlap(&self, p: u32, g: u32, inter: u64) -> Overlap {
        Overlap {
            intersection: inter,
            union: self.pred_area[&p] + self.gt_area[&g] - inter,
        }
    }

    /// Overlapping partners of each prediction, ascending gt label.
    fn by_pred(&self) -> BTreeMap<u32, Vec<(u32, Overlap)>> {
        let mut m: BTreeMap<u32, Vec<(u32, Overlap)>> = BTreeMap::new();
        for (&(p, g), &inter) in &self.pairs {
            m.entry(p).or_default().push((g, self.overlap(p, g, inter)));
        }
        for v in m.values_mut() {
            v.sort_by_key(|&(g, _)| g);
        }
        m
    }

    fn by_gt(&self) -> BTreeMap<u32, Vec<(u32, Overlap)>> {
        let mut m: BTreeMap<u32, Vec<(u32, Overlap)>> = BTreeMap::new();
        for (&(p, g), &inter) in &self.pairs {
            m.entry(g).or_default().push((p, self.overlap(p, g, inter)));
        }
        for v in m.values_mut() {
            v.sort_by_key(|&(p, _)| p);
        }
        m
    }
}

/// Highest-IoU candidate; ties go to the first (smallest label) in `cands`.
fn best(cands: &[(u32, Overlap)]) -> Option<(u32, Overlap)> {
    let mut out: Option<(u32, Overlap)> = None;
    for &(l, o) in cands {
        if out.is_none_or(|(_, b)| o.cmp_iou(b) == Ordering::Greater) {
            out = Some((l, o));
        }
    }
    out
}

/// Pairs each prediction with its highest-IoU ground-truth instance,
/// one-to-one.
///
/// Predictions claim in order of descending best IoU (ties: smaller pred
/// label first). A prediction whose best ground truth was already claimed,
/// or which overlaps nothing, is left unmatched.
pub fn match_image(pred: &LabelMap, gt: &LabelMap) -> Result<ImageMatches> {
    let o = overlaps(pred, gt)?;
    let by_pred = o.by_pred();
    let mut order: Vec<(u32, Option<(u32, Overlap)>)> = o
        .pred_area
        .keys()
        .map(|&p| (p, by_pred.get(&p).and_then(|c| best(c))))
        .collect();
    order.sort_by(|a, b| match (a.1, b.1) {
        (Some((_, x)), Some((_, y))) => y.cmp_iou(x).then(a.0.cmp(&b.0)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    let mut claimed: HashSet<u32> = HashSet::new();
    let mut matches: Vec<InstanceMatch> = order
        .into_iter()
        .map(|(p, cand)| match cand {
            Some((g, ov)) if claimed.insert(g) => InstanceMatch {
                pred_label: p,
                gt_label: Some(g),
                iou: ov.iou(),
                overlap: ov,
            },
            _ => InstanceMatch {
                pred_label: p,
                gt_label: None,
                iou: 0.0,
                overlap: Overlap { intersection: 0, union: 0 },
            },
        })
        .collect();
    matches.sort_by_key(|m| m.pred_label);
    let unmatched_gt = o.gt_area.keys().copied().filter(|g| !claimed.contains(g)).collect();
    Ok(ImageMatches {
        matches,
        unmatched_gt,
        n_gt: o.gt_area.len(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// TP/FP/FN per threshold, summed over images.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct MatchTally {
    counts: BTreeMap<u32, Counts>,
}

impl Default for MatchTally {
    fn default() -> Self {
        Self::new(&STANDARD_THRESHOLDS)
    }
}

fn hundredths(tau: f64) -> Result<u32> {
    let h = (tau * 100.0).round();
    if !(1.0..=100.0).contains(&h) || (tau * 100.0 - h).abs() > 1e-6 {
        return Err(Error::MissingThreshold(tau));
    }
    Ok(h as u32)
}

impl MatchTally {
    pub fn new(thresholds: &[u32]) -> Self {
        Self {
            counts: thresholds.iter().map(|&t| (t, Counts::default())).collect(),
        }
    }

    pub fn add_image(&mut self, m: &ImageMatches) {
        let n_pred = m.n_pred() as u64;
        let n_gt = m.n_gt as u64;
        for (&tau, c) in self.counts.iter_mut() {
            let tp = m
                .matches
                .iter()
                .filter(|x| x.gt_label.is_some() && x.overlap.reaches(tau))
                .count() as u64;
            c.tp += tp;
            c.fp += n_pred - tp;
            c.fn_ += n_gt - tp;
        }
    }

    /// Sums another tally over the same thresholds.
    pub fn merge(mut self, other: &MatchTally) -> Self {
        for (tau, c) in &other.counts {
            let e = self.counts.entry(*tau).or_default();
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
        }
        self
    }

    pub fn thresholds(&self) -> impl Iterator<Item = u32> + '_ {
        self.counts.keys().copied()
    }

    pub fn counts(&self, tau: f64) -> Result<Counts> {
        self.counts
            .get(&hundredths(tau)?)
            .copied()
            .ok_or(Error::MissingThreshold(tau))
    }

    /// `TP / (TP + FP + FN)`.
    pub fn precision_at(&self, tau: f64) -> Result<f64> {
        let c = self.counts(tau)?;
        let d = c.tp + c.fp + c.fn_;
        if d == 0 {
            return Err(Error::UndefinedMetric("precision: no instances in dataset"));
        }
        Ok(c.tp as f64 / d as f64)
    }

    pub fn ppv_at(&self, tau: f64) -> Result<f64> {
        let c = self.counts(tau)?;
        if c.tp + c.fp == 0 {
            return Err(Error::UndefinedMetric("PPV: no predictions"));
        }
        Ok(c.tp as f64 / (c.tp + c.fp) as f64)
    }

    pub fn fnr_at(&self, tau: f64) -> Result<f64> {
        let c = self.counts(tau)?;
        if c.tp + c.fn_ == 0 {
            return Err(Error::UndefinedMetric("FNR: no ground truth"));
        }
        Ok(c.fn_ as f64 / (c.tp + c.fn_) as f64)
    }

    fn sweep(&self, f: impl Fn(&Self, f64) -> Result<f64>) -> Result<f64> {
        let mut sum = 0.0;
        for &t in &STANDARD_THRESHOLDS {
            sum += f(self, f64::from(t) / 100.0)?;
        }
        Ok(sum / STANDARD_THRESHOLDS.len() as f64)
    }

    /// Mean precision over the ten standard thresholds.
    pub fn average_precision(&self) -> Result<f64> {
        self.sweep(Self::precision_at)
    }

    pub fn appv(&self) -> Result<f64> {
        self.sweep(Self::ppv_at)
    }

    pub fn afnr(&self) -> Result<f64> {
        self.sweep(Self::fnr_at)
    }
}

/// Numerator and denominator of the aggregated Jaccard index; pooling a
/// dataset sums both.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize)]
pub struct AjiParts {
    pub intersection: u64,
    pub union: u64,
}

impl AjiParts {
    pub fn add(self, other: AjiParts) -> AjiParts {
        AjiParts {
            intersection: self.intersection + other.intersection,
            union: self.union + other.union,
        }
    }

    pub fn value(self) -> Result<f64> {
        if self.union == 0 {
            return Err(Error::UndefinedMetric("AJI: both maps are empty"));
        }
        Ok(self.intersection as f64 / self.union as f64)
    }
}

/// Ground-truth instances in ascending label order each take the unused
/// prediction of highest IoU (ties: smaller pred label); a ground truth
/// overlapping no unused prediction contributes its area to the union.
/// Predictions never taken add their area to the union.
pub fn aji_parts(pred: &LabelMap, gt: &LabelMap) -> Result<AjiParts> {
    let o = overlaps(pred, gt)?;
    let by_gt = o.by_gt();
    let mut used: HashSet<u32> = HashSet::new();
    let mut parts = AjiParts::default();
    for (&g, &area) in &o.gt_area {
        let free: Vec<(u32, Overlap)> = by_gt
            .get(&g)
            .map(|c| c.iter().copied().filter(|(p, _)| !used.contains(p)).collect())
            .unwrap_or_default();
        match best(&free) {
            Some((p, ov)) => {
                used.insert(p);
                parts.intersection += ov.intersection;
                parts.union += ov.union;
            }
            None => parts.union += area,
        }
    }
    for (p, &area) in &o.pred_area {
        if !used.contains(p) {
            parts.union += area;
        }
    }
    Ok(parts)
}

pub fn aji(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    aji_parts(pred, gt)?.value()
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct ThresholdRow {
    pub tau: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub ppv: Option<f64>,
    pub fnr: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct MetricSummary {
    pub ap: Option<f64>,
    pub appv: Option<f64>,
    pub afnr: Option<f64>,
    pub aji: Option<f64>,
    pub n_images: usize,
    pub n_pred: u64,
    pub n_gt: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct MetricReport {
    pub rows: Vec<ThresholdRow>,
    pub summary: MetricSummary,
}

/// Undefined ratios (zero denominators) are reported as `None`.
pub fn report(tally: &MatchTally, aji: AjiParts, n_images: usize) -> MetricReport {
    let rows: Vec<ThresholdRow> = tally
        .thresholds()
        .map(|t| {
            let tau = f64::from(t) / 100.0;
            let c = tally.counts(tau).expect("threshold present");
            ThresholdRow {
                tau,
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                precision: tally.precision_at(tau).ok(),
                ppv: tally.ppv_at(tau).ok(),
                fnr: tally.fnr_at(tau).ok(),
            }
        })
        .collect();
    let (n_pred, n_gt) = rows.first().map_or((0, 0), |r| (r.tp + r.fp, r.tp + r.fn_));
    MetricReport {
        rows,
        summary: MetricSummary {
            ap: tally.average_precision().ok(),
            appv: tally.appv().ok(),
            afnr: tally.afnr().ok(),
            aji: aji.value().ok(),
            n_images,
            n_pred,
            n_gt,
        },
    }
}
