use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Mode, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "dsoftki", version, about = "Train and evaluate DSoftKI Gaussian process models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and score it on the held-out split.
    Train(RunArgs),
    /// Score a saved model archive on a dataset.
    Eval(EvalArgs),
    /// Compare objective gradients against finite differences on a small batch.
    Gradcheck(RunArgs),
    /// Train with per-point and with shared temperatures and report the difference.
    Ablate(RunArgs),
    /// Evaluate a two-dimensional model on a regular grid.
    Grid(GridArgs),
}

/// Run settings; flags override values from `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Synthetic function name (branin, six_hump_camel, styblinski_tang, hartmann6, welch20)
    /// or a dataset file path.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Number of interpolation points.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub noise_ratio: Option<f64>,
    #[arg(long)]
    pub num_probes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test points drawn for synthetic datasets.
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub shared_temperature: bool,
    #[arg(long)]
    pub value_only: bool,
    /// Record test metrics after every epoch.
    #[arg(long)]
    pub track_test: bool,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        let mut set = |key: &str, value: Option<String>| match value {
            Some(v) => c.set(key, &v),
            None => Ok(()),
        };
        set("dataset", self.dataset.clone())?;
        set("mode", self.mode.map(|m| m.name().to_string()))?;
        set("m", self.m.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("batch", self.batch.map(|v| v.to_string()))?;
        set("base_lr", self.base_lr.map(|v| v.to_string()))?;
        set("noise_ratio", self.noise_ratio.map(|v| v.to_string()))?;
        set("num_probes", self.num_probes.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("n_train", self.n_train.map(|v| v.to_string()))?;
        set("n_test", self.n_test.map(|v| v.to_string()))?;
        set("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        set("shared_temperature", self.shared_temperature.then(|| "true".into()))?;
        set("value_only", self.value_only.then(|| "true".into()))?;
        set("track_test", self.track_test.then(|| "true".into()))?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model archive written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Synthetic function name or dataset file path.
    #[arg(long)]
    pub dataset: String,
    /// Points drawn for a synthetic dataset.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for metrics.json; the report is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// First-axis range `lo:hi` in raw units; defaults to the training bounds.
    #[arg(long, value_parser = parse_range)]
    pub x_range: Option<(f64, f64)>,
    /// Second-axis range `lo:hi`.
    #[arg(long, value_parser = parse_range)]
    pub y_range: Option<(f64, f64)>,
    /// Points per axis.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `lo:hi`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(lo.is_finite() && hi.is_finite()) {
        return Err("range bounds must be finite".into());
    }
    Ok((lo, hi))
}
