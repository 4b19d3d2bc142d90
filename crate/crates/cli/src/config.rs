//! Run configuration: flat `key = value` files, overridden by command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use dsoftki_core::exact::ORACLE_LIMIT;
use dsoftki_core::{TestFunction, TrainConfig};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dsoftki,
    Softki,
    #[value(name = "exact_gpwd")]
    ExactGpwd,
    #[value(name = "exact_gp")]
    ExactGp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dsoftki => "dsoftki",
            Mode::Softki => "softki",
            Mode::ExactGpwd => "exact_gpwd",
            Mode::ExactGp => "exact_gp",
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Mode::ExactGpwd | Mode::ExactGp)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dsoftki" => Ok(Mode::Dsoftki),
            "softki" => Ok(Mode::Softki),
            "exact_gpwd" => Ok(Mode::ExactGpwd),
            "exact_gp" => Ok(Mode::ExactGp),
            _ => Err(format!(
                "unknown mode `{s}` (expected dsoftki, softki, exact_gpwd or exact_gp)"
            )),
        }
    }
}

/// Synthetic test function or a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { name: String },
    File { path: PathBuf },
}

impl DatasetSource {
    /// Known function names are synthetic; anything else is a path.
    pub fn parse(s: &str) -> Self {
        match TestFunction::from_name(s) {
            Ok(f) => DatasetSource::Synthetic {
                name: f.name().to_string(),
            },
            Err(_) => DatasetSource::File { path: s.into() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Training points; for files the default is half the rows.
    pub n_train: Option<usize>,
    /// Test points generated for synthetic data; files use every remaining row.
    pub n_test: usize,
    pub mode: Mode,
    pub train: TrainConfig,
    pub out: PathBuf,
    /// Refit and score the test split after every epoch.
    pub track_test: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::Synthetic {
                name: "branin".into(),
            },
            n_train: None,
            n_test: 2000,
            mode: Mode::Dsoftki,
            train: TrainConfig::default(),
            out: "out".into(),
            track_test: false,
        }
    }
}

pub const KEYS: [&str; 15] = [
    "dataset",
    "n_train",
    "n_test",
    "mode",
    "m",
    "epochs",
    "batch",
    "base_lr",
    "noise_ratio",
    "num_probes",
    "seed",
    "out",
    "shared_temperature",
    "value_only",
    "track_test",
];

fn typed<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse `{value}` as the value of `{key}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = DatasetSource::parse(value),
            "n_train" => self.n_train = Some(typed(key, value)?),
            "n_test" => self.n_test = typed(key, value)?,
            "mode" => self.mode = value.parse().map_err(CliError::Config)?,
            "m" => self.train.m = typed(key, value)?,
            "epochs" => self.train.epochs = typed(key, value)?,
            "batch" => self.train.batch_size = typed(key, value)?,
            "base_lr" => self.train.base_lr = typed(key, value)?,
            "noise_ratio" => self.train.noise_ratio = typed(key, value)?,
            "num_probes" => self.train.num_probes = typed(key, value)?,
            "seed" => self.train.seed = typed(key, value)?,
            "out" => self.out = value.into(),
            "shared_temperature" => self.train.shared_temperature = typed(key, value)?,
            "value_only" => self.train.value_only = typed(key, value)?,
            "track_test" => self.track_test = typed(key, value)?,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown key `{key}` (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies a config file's assignments in order.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        self.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.train;
        if t.epochs == 0 && self.mode.is_exact() {
            // Zero epochs is meaningful for the interpolated models (fit at initialization) only.
            return Err(CliError::Config("exact modes need at least one epoch".into()));
        }
        t.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.mode.is_exact() && t.shared_temperature {
            return Err(CliError::Config(format!(
                "shared_temperature has no meaning in mode {}",
                self.mode.name()
            )));
        }
        if self.mode == Mode::ExactGpwd && t.value_only {
            return Err(CliError::Config(
                "value_only contradicts mode exact_gpwd; use exact_gp".into(),
            ));
        }
        if self.n_train == Some(0) {
            return Err(CliError::Config("n_train must be positive".into()));
        }
        if let DatasetSource::Synthetic { .. } = self.dataset {
            if self.n_test == 0 {
                return Err(CliError::Config("n_test must be positive".into()));
            }
        }
        Ok(())
    }

    /// Checks that depend on the input dimension and training size.
    pub fn validate_for(&self, d: usize, n_train: usize) -> Result<(), CliError> {
        match self.mode {
            Mode::ExactGpwd | Mode::ExactGp => {
                let rows = if self.mode == Mode::ExactGpwd { d + 1 } else { 1 };
                if n_train * rows > ORACLE_LIMIT {
                    return Err(CliError::Config(format!(
                        "mode {} needs n_train·{rows} ≤ {ORACLE_LIMIT}, got n_train = {n_train}",
                        self.mode.name()
                    )));
                }
            }
            Mode::Dsoftki | Mode::Softki => {
                if self.train.m > n_train {
                    return Err(CliError::Config(format!(
                        "m = {} exceeds the {n_train} training points",
                        self.train.m
                    )));
                }
            }
        }
        Ok(())
    }

    /// Training settings with the mode folded in.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.mode == Mode::Softki {
            t.value_only = true;
        }
        t
    }

    /// Mode actually run: `value_only` turns DSoftKI into SoftKI.
    pub fn effective_mode(&self) -> Mode {
        match self.mode {
            Mode::Dsoftki if self.train.value_only => Mode::Softki,
            Mode::ExactGpwd | Mode::ExactGp | Mode::Softki | Mode::Dsoftki => self.mode,
        }
    }
}
