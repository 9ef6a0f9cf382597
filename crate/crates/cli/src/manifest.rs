//! Sample manifest (JSON).
//!
//! ```json
//! {
//!   "samples": [
//!     {
//!       "sample_id": "field_a",
//!       "metadata": { "soil_layer": "top", "density": "low", "condition": "clean" },
//!       "manual_count": 41,
//!       "images": [
//!         { "stem": "field_a_01", "image": "field_a_01.png",
//!           "scores": "scores/field_a_01", "ground_truth": "field_a_01.gt.png" }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `scores` is a
//! path prefix for `<prefix>.cyst.pfm` and `<prefix>.boundary.pfm` (default:
//! the stem next to the manifest). `height`/`width` are only needed when
//! nothing else tells the image size, i.e. per-tile score files alone.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validation, CliError, CliResult};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoilLayer {
    Top,
    Sub,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Low,
    High,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Debris,
    Clean,
}

macro_rules! display_lowercase {
    ($t:ty { $($v:ident => $s:literal),* }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }
    };
}
display_lowercase!(SoilLayer { Top => "top", Sub => "sub" });
display_lowercase!(Density { Low => "low", High => "high" });
display_lowercase!(Condition { Debris => "debris", Clean => "clean" });

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soil_layer: Option<SoilLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

fn opt_str<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Metadata {
    pub fn fields(&self) -> [String; 3] {
        [
            opt_str(self.soil_layer),
            opt_str(self.density),
            opt_str(self.condition),
        ]
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub stem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub sample_id: String,
    #[serde(default)]
    pub metadata: Metadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_count: Option<u64>,
    pub images: Vec<ImageEntry>,
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub samples: Vec<SampleEntry>,
}

/// A manifest with every relative path resolved.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Manifest {
    pub fn parse(text: &str) -> CliResult<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| validation(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.samples.is_empty() {
            return Err(validation("manifest: no samples"));
        }
        let mut ids = HashSet::new();
        let mut stems = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(validation(format!("manifest: duplicate sample_id {:?}", s.sample_id)));
            }
            if s.images.is_empty() {
                return Err(validation(format!("manifest: sample {:?} has no images", s.sample_id)));
            }
            for im in &s.images {
                let bad = im.stem.is_empty()
                    || im.stem.contains(['/', '\\'])
                    || im.stem == "."
                    || im.stem == "..";
                if bad {
                    return Err(validation(format!("manifest: invalid stem {:?}", im.stem)));
                }
                if !stems.insert(im.stem.as_str()) {
                    return Err(validation(format!("manifest: duplicate stem {:?}", im.stem)));
                }
            }
        }
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = (&SampleEntry, &ImageEntry)> {
        self.samples
            .iter()
            .flat_map(|s| s.images.iter().map(move |im| (s, im)))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

impl LoadedManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let manifest = Manifest::parse(&text)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn score_prefix(&self, im: &ImageEntry) -> PathBuf {
        match &im.scores {
            Some(p) => self.resolve(p),
            None => self.root.join(&im.stem),
        }
    }

    pub fn ground_truth(&self, im: &ImageEntry) -> CliResult<PathBuf> {
        im.ground_truth
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| validation("no ground_truth in manifest"))
    }

    pub fn image(&self, im: &ImageEntry) -> CliResult<PathBuf> {
        im.image
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| validation("no image in manifest"))
    }
}
