use std::path::{Path, PathBuf};
use std::time::Instant;

use dsoftki_core::datasets::{generate, load, normalize, split};
use dsoftki_core::metrics::evaluate;
use dsoftki_core::model::{load_model, predict, save_model};
use dsoftki_core::trainer::{
    batch_labels, evaluate_exact, grad_check, initial_params, train, train_exact, ExactHyper,
    TrainConfig,
};
use dsoftki_core::{LabeledDerivDataset, NormOptions, NormTransform};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{DatasetSource, Mode, RunConfig};
use crate::report::{AblationReport, GradCheckOutput, MetricsReport, SCHEMA_VERSION};
use crate::{
    write_file, CliError, EXACT_MODEL_FILE, GRID_FILE, METRICS_FILE, MODEL_FILE, TELEMETRY_FILE,
};

/// Raw splits plus the normalized training set.
pub struct Data {
    pub train_raw: LabeledDerivDataset,
    pub test_raw: LabeledDerivDataset,
    pub train: LabeledDerivDataset,
    pub norm: NormTransform,
}

pub fn load_data(cfg: &RunConfig) -> Result<Data, CliError> {
    let seed = cfg.train.seed;
    let (train_raw, test_raw) = match &cfg.dataset {
        DatasetSource::Synthetic { name } => {
            let n_train = cfg.n_train.unwrap_or(2000);
            let ds = generate(name, n_train + cfg.n_test, seed)?;
            split(&ds, n_train, seed)?
        }
        DatasetSource::File { path } => {
            let ds = load(path)?;
            let n_train = cfg.n_train.unwrap_or(ds.len() / 2);
            if n_train == 0 || n_train >= ds.len() {
                return Err(CliError::Config(format!(
                    "{} has {} rows; n_train = {n_train} leaves no train/test split",
                    path.display(),
                    ds.len()
                )));
            }
            split(&ds, n_train, seed)?
        }
    };
    let (norm, train, _) = normalize(&train_raw, &[], NormOptions::default())?;
    Ok(Data {
        train_raw,
        test_raw,
        train,
        norm,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Exact-model hyperparameters with the normalization they were trained under.
#[derive(Serialize)]
struct ExactArchive<'a> {
    schema_version: u32,
    hyper: &'a ExactHyper,
    norm: &'a NormTransform,
}

/// Trains, writes the model archive and telemetry into `dir`, and scores the test split.
fn train_into(cfg: &RunConfig, data: &Data, dir: &Path, command: &str) -> Result<MetricsReport, CliError> {
    let start = Instant::now();
    let tc = cfg.train_config();
    let mode = cfg.effective_mode();
    ensure_dir(dir)?;
    let mut report = match mode {
        Mode::Dsoftki | Mode::Softki => {
            let test = cfg.track_test.then_some(&data.test_raw);
            let out = train(&data.train, &data.norm, &tc, test)?;
            save_model(&out.model, dir.join(MODEL_FILE))?;
            write_file(&dir.join(TELEMETRY_FILE), &out.telemetry.to_csv(false))?;
            let mut r = MetricsReport::new(command, mode, tc.seed, &evaluate(&out.model, &data.test_raw));
            r.fallbacks = out.telemetry.total_fallbacks();
            r
        }
        Mode::ExactGpwd | Mode::ExactGp => {
            let out = train_exact(&data.train, &tc, mode == Mode::ExactGpwd)?;
            let archive = ExactArchive {
                schema_version: SCHEMA_VERSION,
                hyper: &out.hyper,
                norm: &data.norm,
            };
            let json = serde_json::to_string_pretty(&archive).expect("archive serializes");
            write_file(&dir.join(EXACT_MODEL_FILE), &json)?;
            write_file(&dir.join(TELEMETRY_FILE), &out.telemetry.to_csv(false))?;
            let eval = evaluate_exact(&out.hyper, &data.train, &data.norm, &data.test_raw)?;
            MetricsReport::new(command, mode, tc.seed, &eval)
        }
    };
    report.config = Some(cfg.clone());
    report.n_train = data.train_raw.len();
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    report.check_finite()?;
    write_file(&dir.join(METRICS_FILE), &report.to_json())?;
    Ok(report)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    cfg.validate_for(data.train.dim(), data.train.len())?;
    train_into(cfg, &data, &cfg.out, "train")
}

/// Where `eval` reads its data from.
pub struct EvalSource {
    pub dataset: DatasetSource,
    /// Size of a synthetic sample.
    pub n: usize,
    pub seed: u64,
}

pub fn cmd_eval(model_path: &Path, source: &EvalSource, out: Option<&Path>) -> Result<MetricsReport, CliError> {
    let start = Instant::now();
    let model = load_model(model_path)?;
    let data = match &source.dataset {
        DatasetSource::Synthetic { name } => generate(name, source.n, source.seed)?,
        DatasetSource::File { path } => load(path)?,
    };
    if data.dim() != model.norm.dim() {
        return Err(dsoftki_core::Error::DimensionMismatch(format!(
            "dataset has {} inputs, model expects {}",
            data.dim(),
            model.norm.dim()
        ))
        .into());
    }
    let mode = if model.observations == dsoftki_core::Observations::ValuesOnly {
        Mode::Softki
    } else {
        Mode::Dsoftki
    };
    let mut report = MetricsReport::new("eval", mode, source.seed, &evaluate(&model, &data));
    report.model = Some(model_path.display().to_string());
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    report.check_finite()?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join(METRICS_FILE), &report.to_json())?;
    }
    Ok(report)
}

/// Points and interpolation points used by `gradcheck`.
pub const GRADCHECK_POINTS: usize = 8;
pub const GRADCHECK_M: usize = 4;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_THRESHOLD: f64 = 1e-3;

/// Finite-difference check of the objective gradient on the first training points.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradCheckOutput, CliError> {
    cfg.validate()?;
    if cfg.mode.is_exact() {
        return Err(CliError::Config(
            "gradcheck applies to the dsoftki and softki modes".into(),
        ));
    }
    let data = load_data(cfg)?;
    let n = data.train.len().min(GRADCHECK_POINTS);
    let batch = data.train.rows(0, n);
    let tc = TrainConfig {
        m: cfg.train.m.min(GRADCHECK_M).min(n),
        ..cfg.train_config()
    };
    // Interpolation points come from rows outside the batch: a point sitting
    // exactly on a datapoint is a kink of the softmax distance.
    let rest = data.train.rows(n, data.train.len() - n);
    let params = initial_params(if rest.len() >= tc.m { &rest } else { &batch }, &tc)?;
    let obs = tc.observations();
    let report = grad_check(&params, &batch.x, &batch_labels(&batch, obs), GRADCHECK_STEP, obs)?;
    let max_error = report.max_error();
    let out = GradCheckOutput {
        schema_version: SCHEMA_VERSION,
        seed: tc.seed,
        n,
        m: tc.m,
        step: GRADCHECK_STEP,
        threshold: GRADCHECK_THRESHOLD,
        groups: report.groups.clone(),
        max_error,
        pass: max_error <= GRADCHECK_THRESHOLD,
    };
    ensure_dir(&cfg.out)?;
    let json = serde_json::to_string_pretty(&out).expect("report serializes");
    write_file(&cfg.out.join("gradcheck.json"), &json)?;
    Ok(out)
}

/// Trains the configured run twice, with per-point and with shared temperatures.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport, CliError> {
    cfg.validate()?;
    if cfg.mode.is_exact() {
        return Err(CliError::Config(
            "ablate applies to the dsoftki and softki modes".into(),
        ));
    }
    let data = load_data(cfg)?;
    cfg.validate_for(data.train.dim(), data.train.len())?;
    let run = |shared: bool, sub: &str| {
        let mut c = cfg.clone();
        c.train.shared_temperature = shared;
        c.out = cfg.out.join(sub);
        train_into(&c, &data, &c.out, "ablate")
    };
    let per_point = run(false, "per_point")?;
    let shared = run(true, "shared")?;
    let report = AblationReport {
        schema_version: SCHEMA_VERSION,
        delta_rmse: shared.metrics.value_rmse - per_point.metrics.value_rmse,
        delta_nll: shared.metrics.nll - per_point.metrics.nll,
        per_point,
        shared,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.out.join("ablate.json"), &json)?;
    Ok(report)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Row-major grid (second axis outer) of raw-unit predictions.
///
/// Columns: `x0,x1,value,grad0,grad1`. Returns the path written.
pub fn cmd_grid(
    model_path: &Path,
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
    steps: usize,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let model = load_model(model_path)?;
    let d = model.norm.dim();
    if d != 2 {
        return Err(dsoftki_core::Error::DimensionUnsupported(d).into());
    }
    if steps == 0 {
        return Err(CliError::Config("steps must be positive".into()));
    }
    // Default ranges: the training bounds, i.e. the unit square mapped back.
    let corners = model
        .norm
        .invert_inputs(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]));
    let xr = x_range.unwrap_or((corners[(0, 0)], corners[(1, 0)]));
    let yr = y_range.unwrap_or((corners[(0, 1)], corners[(1, 1)]));
    let xs = linspace(xr.0, xr.1, steps);
    let ys = linspace(yr.0, yr.1, steps);
    let mut pts = DMatrix::zeros(steps * steps, 2);
    for (j, y) in ys.iter().enumerate() {
        for (i, x) in xs.iter().enumerate() {
            pts[(j * steps + i, 0)] = *x;
            pts[(j * steps + i, 1)] = *y;
        }
    }
    let pred = predict(&model, &pts, false);
    let mut csv = String::from("x0,x1,value,grad0,grad1\n");
    for r in 0..pts.nrows() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            pts[(r, 0)],
            pts[(r, 1)],
            pred.values[r],
            pred.gradients[(r, 0)],
            pred.gradients[(r, 1)]
        ));
    }
    ensure_dir(out)?;
    let path = out.join(GRID_FILE);
    write_file(&path, &csv)?;
    Ok(path)
}
