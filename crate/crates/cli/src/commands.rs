use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cystscan::grid::LabelMap;
use cystscan::io::{read_label_png, read_rgb_png, write_label_png, write_rgb_png};
use cystscan::metrics::{aji_parts, match_image, report, AjiParts, MatchTally};
use cystscan::pipeline::process_image;
use cystscan::scorer::{stream_seed, FileScorer, MockScorer, RemoteScorer};
use cystscan::stats::{
    ad_ksample_areas, histogram_density, instance_areas, linear_fit, pearson, AdResult, AreaSample,
};
use cystscan::synthgen::{generate, render, SceneSpec};

use crate::config::{RunConfig, ScorerChoice};
use crate::error::{validation, CliError, CliResult};
use crate::manifest::{ImageEntry, LoadedManifest, Manifest, Metadata, SampleEntry};
use crate::output::{create_dir, csv_text, ensure_writable, json_text, write_file};

pub const LABELS_SUFFIX: &str = ".labels.png";

pub fn labels_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}{LABELS_SUFFIX}"))
}

// ---------------------------------------------------------------------------
// generate

/// Dataset description for `generate`, read from TOML. `[scene]` holds the
/// per-scene generator settings; its `seed` is replaced by one derived from
/// the top-level seed and the scene index.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSpec {
    pub seed: u64,
    pub scenes: usize,
    pub images_per_sample: usize,
    pub prefix: String,
    pub render: bool,
    /// Inclusive range; when set, each scene draws its own cyst count.
    pub n_cysts_range: Option<(usize, usize)>,
    pub metadata: Metadata,
    pub scene: SceneSpec,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 1,
            images_per_sample: 1,
            prefix: "scene".into(),
            render: false,
            n_cysts_range: None,
            metadata: Metadata::default(),
            scene: SceneSpec::default(),
        }
    }
}

impl GenerateSpec {
    pub fn parse(text: &str) -> CliResult<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| validation(format!("spec: {e}")))?;
        if spec.scenes == 0 || spec.images_per_sample == 0 {
            return Err(validation("spec: scenes and images_per_sample must be >= 1"));
        }
        if let Some((lo, hi)) = spec.n_cysts_range {
            if lo > hi {
                return Err(validation(format!("spec: empty n_cysts_range [{lo}, {hi}]")));
            }
        }
        if spec.prefix.is_empty() || spec.prefix.contains(['/', '\\']) {
            return Err(validation(format!("spec: invalid prefix {:?}", spec.prefix)));
        }
        Ok(spec)
    }

    fn scene_spec(&self, index: usize) -> SceneSpec {
        let mut s = self.scene.clone();
        s.seed = stream_seed(self.seed, &format!("scene-{index}"));
        if let Some((lo, hi)) = self.n_cysts_range {
            let span = (hi - lo + 1) as u64;
            s.n_cysts = lo + (stream_seed(s.seed, "n_cysts") % span) as usize;
        }
        s
    }
}

pub fn cmd_generate(spec_path: &Path, out: &Path, force: bool) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", spec_path.display())))?;
    let spec = GenerateSpec::parse(&text)?;
    let stems: Vec<String> = (0..spec.scenes)
        .map(|i| format!("{}_{i:03}", spec.prefix))
        .collect();
    let mut targets = vec![out.join("manifest.json")];
    for stem in &stems {
        targets.push(out.join(format!("{stem}.gt.png")));
        targets.push(out.join(format!("{stem}.ledger.json")));
        if spec.render {
            targets.push(out.join(format!("{stem}.rgb.png")));
        }
    }
    ensure_writable(&targets, force)?;
    create_dir(out)?;

    let counts: Vec<u64> = stems
        .par_iter()
        .enumerate()
        .map(|(i, stem)| -> CliResult<u64> {
            let scene_spec = spec.scene_spec(i);
            let scene = generate(&scene_spec).map_err(|e| CliError::from(e).context(stem))?;
            write_label_png(&out.join(format!("{stem}.gt.png")), &scene.gt)?;
            write_file(&out.join(format!("{stem}.ledger.json")), &json_text(&scene.ledger))?;
            if spec.render {
                write_rgb_png(&out.join(format!("{stem}.rgb.png")), &render(&scene, scene_spec.seed))?;
            }
            Ok(scene.ledger.instances.len() as u64)
        })
        .collect::<CliResult<_>>()?;

    let samples = stems
        .chunks(spec.images_per_sample)
        .zip(counts.chunks(spec.images_per_sample))
        .enumerate()
        .map(|(j, (group, n))| SampleEntry {
            sample_id: format!("{}_s{j:03}", spec.prefix),
            metadata: spec.metadata,
            manual_count: Some(n.iter().sum()),
            images: group
                .iter()
                .map(|stem| ImageEntry {
                    stem: stem.clone(),
                    image: spec.render.then(|| PathBuf::from(format!("{stem}.rgb.png"))),
                    scores: None,
                    ground_truth: Some(PathBuf::from(format!("{stem}.gt.png"))),
                    height: None,
                    width: None,
                })
                .collect(),
        })
        .collect();
    let manifest = Manifest { samples };
    write_file(&out.join("manifest.json"), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// segment

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SampleCount {
    pub sample_id: String,
    pub n_images: usize,
    pub automatic_count: u64,
    pub manual_count: Option<u64>,
    pub soil_layer: String,
    pub density: String,
    pub condition: String,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ImageCount {
    pub stem: String,
    pub sample_id: String,
    pub automatic_count: u64,
}

fn label_count(labels: &LabelMap) -> u64 {
    labels
        .as_slice()
        .iter()
        .filter(|&&l| l != 0)
        .collect::<BTreeSet<_>>()
        .len() as u64
}

fn segment_one(
    m: &LoadedManifest,
    im: &ImageEntry,
    cfg: &RunConfig,
    remote: Option<&RemoteScorer>,
) -> CliResult<LabelMap> {
    let params = cfg.pipeline()?;
    let manifest_dims = im.height.zip(im.width);
    let labels = match cfg.scorer {
        ScorerChoice::File => {
            let provider = FileScorer::new(m.score_prefix(im));
            let dims = match (provider.image_dims()?, manifest_dims) {
                (Some(d), _) | (None, Some(d)) => d,
                (None, None) => match &im.ground_truth {
                    Some(_) => read_label_png(&m.ground_truth(im)?)?.dims(),
                    None => {
                        return Err(validation(
                            "no image-level score maps and no height/width in manifest",
                        ))
                    }
                },
            };
            process_image(&provider, &im.stem, dims, None, cfg.tiling(), &params)?
        }
        ScorerChoice::Mock => {
            let gt = read_label_png(&m.ground_truth(im)?)?;
            let provider = MockScorer::new(&gt, cfg.mock(), &im.stem)?;
            process_image(&provider, &im.stem, gt.dims(), None, cfg.tiling(), &params)?
        }
        ScorerChoice::Remote => {
            let rgb = read_rgb_png(&m.image(im)?)?;
            let provider = remote.expect("remote scorer constructed");
            process_image(provider, &im.stem, rgb.dims(), Some(&rgb), cfg.tiling(), &params)?
        }
    };
    Ok(labels)
}

pub struct SegmentSummary {
    pub samples: Vec<SampleCount>,
    pub images: Vec<ImageCount>,
}

/// Labels every image, writes `<stem>.labels.png`, `counts.csv`, and
/// `image_counts.csv`. Per-image failures are collected and reported
/// together; any failure fails the command.
pub fn cmd_segment(
    manifest_path: &Path,
    out: &Path,
    cfg: &RunConfig,
    force: bool,
) -> CliResult<SegmentSummary> {
    let m = LoadedManifest::load(manifest_path)?;
    let images: Vec<(&SampleEntry, &ImageEntry)> = m.manifest.images().collect();
    let mut targets: Vec<PathBuf> = images.iter().map(|(_, im)| labels_path(out, &im.stem)).collect();
    targets.push(out.join("counts.csv"));
    targets.push(out.join("image_counts.csv"));
    ensure_writable(&targets, force)?;
    create_dir(out)?;

    let remote = match cfg.scorer {
        ScorerChoice::Remote => Some(RemoteScorer::new(&cfg.remote())?),
        _ => None,
    };
    let results: Vec<CliResult<u64>> = images
        .par_iter()
        .map(|(_, im)| {
            let labels = segment_one(&m, im, cfg, remote.as_ref()).map_err(|e| e.context(&im.stem))?;
            write_label_png(&labels_path(out, &im.stem), &labels)
                .map_err(|e| CliError::from(e).context(&im.stem))?;
            Ok(label_count(&labels))
        })
        .collect();

    let failures: Vec<&CliError> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if !failures.is_empty() {
        let msg = failures.iter().map(|e| e.message()).collect::<Vec<_>>().join("\n");
        let msg = format!("{} of {} image(s) failed:\n{msg}", failures.len(), images.len());
        return Err(if failures.iter().all(|e| matches!(e, CliError::Validation(_))) {
            CliError::Validation(msg)
        } else {
            CliError::Runtime(msg)
        });
    }
    let per_image: Vec<ImageCount> = images
        .iter()
        .zip(&results)
        .map(|((s, im), r)| ImageCount {
            stem: im.stem.clone(),
            sample_id: s.sample_id.clone(),
            automatic_count: *r.as_ref().expect("no failures"),
        })
        .collect();
    let mut totals: HashMap<&str, u64> = HashMap::new();
    for c in &per_image {
        *totals.entry(&c.sample_id).or_default() += c.automatic_count;
    }
    let samples: Vec<SampleCount> = m
        .manifest
        .samples
        .iter()
        .map(|s| {
            let [soil_layer, density, condition] = s.metadata.fields();
            SampleCount {
                sample_id: s.sample_id.clone(),
                n_images: s.images.len(),
                automatic_count: totals[s.sample_id.as_str()],
                manual_count: s.manual_count,
                soil_layer,
                density,
                condition,
            }
        })
        .collect();
    let header = cfg.header();
    write_file(&out.join("counts.csv"), &csv_text(&header, &samples)?)?;
    write_file(&out.join("image_counts.csv"), &csv_text(&header, &per_image)?)?;
    Ok(SegmentSummary {
        samples,
        images: per_image,
    })
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub tau: f64,
    #[serde(rename = "TP")]
    pub tp: u64,
    #[serde(rename = "FP")]
    pub fp: u64,
    #[serde(rename = "FN")]
    pub fn_: u64,
    #[serde(rename = "P")]
    pub precision: Option<f64>,
    #[serde(rename = "PPV")]
    pub ppv: Option<f64>,
    #[serde(rename = "FNR")]
    pub fnr: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MetricsJson {
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    #[serde(rename = "APPV")]
    pub appv: Option<f64>,
    #[serde(rename = "AFNR")]
    pub afnr: Option<f64>,
    #[serde(rename = "AJI")]
    pub aji: Option<f64>,
    pub n_images: usize,
    pub n_predictions: u64,
    pub n_ground_truth: u64,
    pub config: RunConfig,
}

/// Stems of `*.labels.png` files in `dir`.
fn prediction_stems(dir: &Path) -> CliResult<BTreeSet<String>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let mut stems = BTreeSet::new();
    for e in entries {
        let name = e?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(LABELS_SUFFIX) {
            stems.insert(stem.to_string());
        }
    }
    Ok(stems)
}

/// Every manifest image must have ground truth and a prediction, and every
/// prediction file must belong to a manifest image.
fn paired_predictions<'a>(
    m: &'a LoadedManifest,
    predictions: &Path,
) -> CliResult<Vec<(&'a SampleEntry, &'a ImageEntry)>> {
    let images: Vec<(&SampleEntry, &ImageEntry)> = m.manifest.images().collect();
    let found = prediction_stems(predictions)?;
    let known: BTreeSet<&str> = images.iter().map(|(_, im)| im.stem.as_str()).collect();
    let stray: Vec<&str> = found
        .iter()
        .map(String::as_str)
        .filter(|s| !known.contains(s))
        .collect();
    if !stray.is_empty() {
        return Err(validation(format!(
            "prediction files without a manifest image: {}",
            stray.join(", ")
        )));
    }
    let missing: Vec<&str> = known.iter().copied().filter(|s| !found.contains(*s)).collect();
    if !missing.is_empty() {
        return Err(validation(format!("no prediction for: {}", missing.join(", "))));
    }
    Ok(images)
}

pub fn cmd_evaluate(
    manifest_path: &Path,
    predictions: &Path,
    out: &Path,
    cfg: &RunConfig,
    force: bool,
) -> CliResult<MetricsJson> {
    let m = LoadedManifest::load(manifest_path)?;
    let images = paired_predictions(&m, predictions)?;
    for (_, im) in &images {
        m.ground_truth(im).map_err(|e| e.context(&im.stem))?;
    }
    let csv_path = out.join("metrics.csv");
    let json_path = out.join("metrics.json");
    ensure_writable(&[csv_path.clone(), json_path.clone()], force)?;
    create_dir(out)?;

    let per_image: Vec<(MatchTally, AjiParts)> = images
        .par_iter()
        .map(|(_, im)| -> CliResult<_> {
            let ctx = |e: cystscan::Error| CliError::from(e).context(&im.stem);
            let gt = read_label_png(&m.ground_truth(im).map_err(|e| e.context(&im.stem))?).map_err(ctx)?;
            let pred = read_label_png(&labels_path(predictions, &im.stem)).map_err(ctx)?;
            let mut t = MatchTally::default();
            t.add_image(&match_image(&pred, &gt).map_err(ctx)?);
            Ok((t, aji_parts(&pred, &gt).map_err(ctx)?))
        })
        .collect::<CliResult<_>>()?;
    let (tally, aji) = per_image
        .into_iter()
        .fold((MatchTally::default(), AjiParts::default()), |(t, a), (ti, ai)| {
            (t.merge(&ti), a.add(ai))
        });
    let rep = report(&tally, aji, images.len());
    let rows: Vec<MetricRow> = rep
        .rows
        .iter()
        .map(|r| MetricRow {
            tau: r.tau,
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            precision: r.precision,
            ppv: r.ppv,
            fnr: r.fnr,
        })
        .collect();
    let summary = MetricsJson {
        ap: rep.summary.ap,
        appv: rep.summary.appv,
        afnr: rep.summary.afnr,
        aji: rep.summary.aji,
        n_images: rep.summary.n_images,
        n_predictions: rep.summary.n_pred,
        n_ground_truth: rep.summary.n_gt,
        config: cfg.clone(),
    };
    write_file(&csv_path, &csv_text(&cfg.header(), &rows)?)?;
    write_file(&json_path, &json_text(&summary))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// phenotype

#[derive(Clone, Copy, PartialEq, Eq, Debug, clap::ValueEnum)]
pub enum GroupBy {
    SoilLayer,
    Density,
    Condition,
    Sample,
}

impl GroupBy {
    fn key(self, s: &SampleEntry) -> String {
        let [soil, density, condition] = s.metadata.fields();
        let v = match self {
            GroupBy::SoilLayer => soil,
            GroupBy::Density => density,
            GroupBy::Condition => condition,
            GroupBy::Sample => s.sample_id.clone(),
        };
        if v.is_empty() {
            "unspecified".into()
        } else {
            v
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct AreaRow {
    pub population: String,
    pub sample_id: String,
    pub stem: String,
    pub instance: usize,
    pub area: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct HistogramRow {
    pub population: String,
    pub lower: f64,
    pub center: f64,
    pub count: u64,
    pub density: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub id: String,
    pub n: usize,
    pub mean: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct AdSummary {
    pub statistic: f64,
    pub a2akn: f64,
    pub p: f64,
    pub method: String,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CountSummary {
    pub n_pairs: usize,
    pub pearson: f64,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PhenotypeJson {
    pub group_by: String,
    pub bin_width: f64,
    pub populations: Vec<PopulationSummary>,
    pub anderson_darling: Option<AdSummary>,
    pub counts: Option<CountSummary>,
    pub config: RunConfig,
}

pub fn cmd_phenotype(
    manifest_path: &Path,
    predictions: &Path,
    out: &Path,
    group_by: GroupBy,
    cfg: &RunConfig,
    force: bool,
) -> CliResult<PhenotypeJson> {
    let m = LoadedManifest::load(manifest_path)?;
    let images = paired_predictions(&m, predictions)?;
    let targets = ["areas.csv", "histogram.csv", "phenotype.json"].map(|f| out.join(f));
    ensure_writable(&targets, force)?;
    create_dir(out)?;

    let areas: Vec<Vec<u64>> = images
        .par_iter()
        .map(|(_, im)| {
            read_label_png(&labels_path(predictions, &im.stem))
                .map(|l| instance_areas(&l))
                .map_err(|e| CliError::from(e).context(&im.stem))
        })
        .collect::<CliResult<_>>()?;

    let mut populations: Vec<AreaSample> = Vec::new();
    let mut rows = Vec::new();
    let mut automatic: HashMap<&str, u64> = HashMap::new();
    for ((s, im), a) in images.iter().zip(&areas) {
        let pop = group_by.key(s);
        *automatic.entry(&s.sample_id).or_default() += a.len() as u64;
        let idx = match populations.iter().position(|p| p.population_id == pop) {
            Some(i) => i,
            None => {
                populations.push(AreaSample {
                    population_id: pop.clone(),
                    areas: Vec::new(),
                });
                populations.len() - 1
            }
        };
        populations[idx].areas.extend_from_slice(a);
        for (k, &area) in a.iter().enumerate() {
            rows.push(AreaRow {
                population: pop.clone(),
                sample_id: s.sample_id.clone(),
                stem: im.stem.clone(),
                instance: k + 1,
                area,
            });
        }
    }

    let mut hist_rows = Vec::new();
    let mut summaries = Vec::new();
    for p in &populations {
        let vals: Vec<f64> = p.areas.iter().map(|&a| a as f64).collect();
        let mean = if vals.is_empty() {
            None
        } else {
            let h = histogram_density(&vals, cfg.bin_width)?;
            hist_rows.extend(h.bins.iter().map(|b| HistogramRow {
                population: p.population_id.clone(),
                lower: b.lower,
                center: b.center,
                count: b.count,
                density: b.density,
            }));
            Some(h.mean)
        };
        summaries.push(PopulationSummary {
            id: p.population_id.clone(),
            n: vals.len(),
            mean,
        });
    }

    let anderson_darling = if populations.len() >= 2 {
        let r: AdResult = ad_ksample_areas(&populations, cfg.ad_method())
            .map_err(|e| CliError::from(e).context("Anderson-Darling test"))?;
        Some(AdSummary {
            statistic: r.statistic,
            a2akn: r.a2akn,
            p: r.p_value,
            method: format!("{:?}", cfg.ad_method).to_lowercase(),
        })
    } else {
        None
    };

    let pairs: Vec<(f64, f64)> = m
        .manifest
        .samples
        .iter()
        .filter_map(|s| s.manual_count.map(|c| (c as f64, automatic[s.sample_id.as_str()] as f64)))
        .collect();
    let counts = if pairs.is_empty() {
        None
    } else {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let ctx = |e: cystscan::Error| CliError::from(e).context("manual vs automatic counts");
        let fit = linear_fit(&x, &y).map_err(ctx)?;
        Some(CountSummary {
            n_pairs: pairs.len(),
            pearson: pearson(&x, &y).map_err(ctx)?,
            slope: fit.slope,
            intercept: fit.intercept,
        })
    };

    let header = cfg.header();
    write_file(&targets[0], &csv_text(&header, &rows)?)?;
    write_file(&targets[1], &csv_text(&header, &hist_rows)?)?;
    let summary = PhenotypeJson {
        group_by: format!("{group_by:?}"),
        bin_width: cfg.bin_width,
        populations: summaries,
        anderson_darling,
        counts,
        config: cfg.clone(),
    };
    write_file(&targets[2], &json_text(&summary))?;
    Ok(summary)
}
