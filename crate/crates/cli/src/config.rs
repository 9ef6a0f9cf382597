//! Run configuration: a flat TOML file whose keys mirror the long command
//! line flags. Flags given on the command line take precedence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cystscan::instance::{Connectivity, PipelineParams};
use cystscan::pipeline::Tiling;
use cystscan::scorer::{MockParams, RemoteParams};
use cystscan::stats::{AdPValue, DEFAULT_BIN_WIDTH};
use cystscan::tiler::{DEFAULT_OVERLAP, DEFAULT_TILE_SIZE};

use crate::error::{validation, CliResult};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerChoice {
    File,
    Mock,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdMethod {
    Asymptotic,
    Interpolated,
    Permutation,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub tile_size: usize,
    pub overlap: usize,
    pub cyst_threshold: f32,
    pub boundary_threshold: f32,
    pub min_size: usize,
    pub connectivity: u32,
    /// Worker count, 0 for one per core. Not echoed into reports, which do
    /// not depend on it.
    #[serde(skip_serializing)]
    pub threads: usize,
    pub seed: u64,
    pub scorer: ScorerChoice,
    pub mock_noise_sigma: f64,
    pub mock_blur_radius: usize,
    pub mock_debris_rate: f64,
    pub remote_endpoint: String,
    pub remote_retries: usize,
    pub remote_max_in_flight: usize,
    pub remote_timeout_ms: u64,
    pub bin_width: f64,
    pub ad_method: AdMethod,
    pub ad_resamples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineParams::default();
        let remote = RemoteParams::default();
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            overlap: DEFAULT_OVERLAP,
            cyst_threshold: pipeline.cyst_threshold,
            boundary_threshold: pipeline.boundary_threshold,
            min_size: pipeline.min_size,
            connectivity: pipeline.connectivity.neighbors(),
            threads: 0,
            seed: 0,
            scorer: ScorerChoice::File,
            mock_noise_sigma: 0.0,
            mock_blur_radius: 0,
            mock_debris_rate: 0.0,
            remote_endpoint: remote.endpoint,
            remote_retries: remote.retries,
            remote_max_in_flight: remote.max_in_flight,
            remote_timeout_ms: remote.timeout_ms,
            bin_width: DEFAULT_BIN_WIDTH,
            ad_method: AdMethod::Asymptotic,
            ad_resamples: 10_000,
        }
    }
}

/// Command line overrides; `None` keeps the configured value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scorer: Option<ScorerChoice>,
    pub tile_size: Option<usize>,
    pub overlap: Option<usize>,
    pub min_size: Option<usize>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub bin_width: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| validation(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| crate::error::CliError::Runtime(format!("{}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        let o = overrides;
        if let Some(v) = o.scorer {
            cfg.scorer = v;
        }
        if let Some(v) = o.tile_size {
            cfg.tile_size = v;
        }
        if let Some(v) = o.overlap {
            cfg.overlap = v;
        }
        if let Some(v) = o.min_size {
            cfg.min_size = v;
        }
        if let Some(v) = o.threads {
            cfg.threads = v;
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.bin_width {
            cfg.bin_width = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.pipeline()?.validate()?;
        self.mock().validate()?;
        if self.tile_size == 0 || self.overlap >= self.tile_size {
            return Err(validation(format!(
                "overlap {} must be smaller than tile size {}",
                self.overlap, self.tile_size
            )));
        }
        if !(self.bin_width >= 1.0) {
            return Err(validation(format!("bin-width must be >= 1, got {}", self.bin_width)));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> CliResult<PipelineParams> {
        Ok(PipelineParams {
            cyst_threshold: self.cyst_threshold,
            boundary_threshold: self.boundary_threshold,
            min_size: self.min_size,
            connectivity: Connectivity::from_neighbors(self.connectivity)?,
        })
    }

    pub fn tiling(&self) -> Tiling {
        Tiling {
            tile_size: self.tile_size,
            overlap: self.overlap,
        }
    }

    pub fn mock(&self) -> MockParams {
        MockParams {
            noise_sigma: self.mock_noise_sigma,
            blur_radius: self.mock_blur_radius,
            seed: self.seed,
            debris_rate: self.mock_debris_rate,
            ..MockParams::default()
        }
    }

    pub fn remote(&self) -> RemoteParams {
        RemoteParams {
            endpoint: self.remote_endpoint.clone(),
            retries: self.remote_retries,
            max_in_flight: self.remote_max_in_flight,
            timeout_ms: self.remote_timeout_ms,
        }
    }

    pub fn ad_method(&self) -> AdPValue {
        match self.ad_method {
            AdMethod::Asymptotic => AdPValue::Asymptotic,
            AdMethod::Interpolated => AdPValue::Interpolated,
            AdMethod::Permutation => AdPValue::Permutation {
                resamples: self.ad_resamples,
                seed: self.seed,
            },
        }
    }

    /// The configuration as `# key = value` lines for report headers.
    pub fn header(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        text.lines().map(|l| format!("# {l}\n")).collect()
    }
}
