//! Batch front end: `generate`, `segment`, `evaluate`, and `phenotype`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::GroupBy;
use crate::config::{Overrides, RunConfig, ScorerChoice};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "cystscan", version, about = "Cyst instance segmentation, evaluation, and phenotyping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Flat TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerChoice>,
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub min_size: Option<usize>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic scenes, their ledgers, and a manifest.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Label every manifest image and count instances per sample.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score predicted label maps against ground truth.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Area distributions, Anderson-Darling test, and count agreement.
    Phenotype {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "soil-layer")]
        group_by: GroupBy,
        #[arg(long)]
        bin_width: Option<f64>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_config(common: &CommonArgs, bin_width: Option<f64>) -> CliResult<RunConfig> {
    let o = Overrides {
        scorer: common.scorer,
        tile_size: common.tile_size,
        overlap: common.overlap,
        min_size: common.min_size,
        threads: common.threads,
        seed: common.seed,
        bin_width,
    };
    RunConfig::load(common.config.as_deref(), &o)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(f)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { spec, out, common } => {
            let cfg = load_config(&common, None)?;
            in_pool(cfg.threads, || commands::cmd_generate(&spec, &out, common.force))?;
        }
        Command::Segment { manifest, out, common } => {
            let cfg = load_config(&common, None)?;
            let s = in_pool(cfg.threads, || commands::cmd_segment(&manifest, &out, &cfg, common.force))?;
            let total: u64 = s.samples.iter().map(|c| c.automatic_count).sum();
            eprintln!("segmented {} image(s): {total} instance(s)", s.images.len());
        }
        Command::Evaluate {
            manifest,
            predictions,
            out,
            common,
        } => {
            let cfg = load_config(&common, None)?;
            let s = in_pool(cfg.threads, || {
                commands::cmd_evaluate(&manifest, &predictions, &out, &cfg, common.force)
            })?;
            let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
            eprintln!(
                "AP {} APPV {} AFNR {} AJI {}",
                fmt(s.ap),
                fmt(s.appv),
                fmt(s.afnr),
                fmt(s.aji)
            );
        }
        Command::Phenotype {
            manifest,
            predictions,
            out,
            group_by,
            bin_width,
            common,
        } => {
            let cfg = load_config(&common, bin_width)?;
            in_pool(cfg.threads, || {
                commands::cmd_phenotype(&manifest, &predictions, &out, group_by, &cfg, common.force)
            })?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command, prints
/// any error, and returns the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
