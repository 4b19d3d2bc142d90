//! Self-describing JSON archive of a fitted model.
//!
//! Floats are written with shortest round-trip formatting, so save/load is
//! bit-exact for every finite value.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datasets::NormTransform;
use crate::error::{Error, Result};
use crate::exact::GpwdNoise;
use crate::interp::{InterpField, Observations};
use crate::kernels::KernelParams;

use super::fit::FittedModel;
use super::params::DsoftkiParams;

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Matrix {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl Matrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn into_matrix(self, what: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "archive field {what}: {} entries for {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct Archive {
    format: String,
    version: u32,
    kernel: KernelParams,
    points: Matrix,
    temperatures: Matrix,
    eps: f64,
    shared_temperature: bool,
    noise: GpwdNoise,
    value_only: bool,
    alpha: Vec<f64>,
    r: Matrix,
    jitter: f64,
    norm: NormTransform,
}

const FORMAT: &str = "dsoftki-model";

pub fn to_json(model: &FittedModel) -> Result<String> {
    let p = &model.params;
    let archive = Archive {
        format: FORMAT.into(),
        version: ARCHIVE_VERSION,
        kernel: p.kernel.clone(),
        points: Matrix::from(&p.field.points),
        temperatures: Matrix::from(&p.field.temperatures),
        eps: p.field.eps,
        shared_temperature: p.field.shared_temperature,
        noise: p.noise,
        value_only: !model.observations.with_gradients(),
        alpha: model.alpha.as_slice().to_vec(),
        r: Matrix::from(&model.r),
        jitter: model.jitter,
        norm: model.norm.clone(),
    };
    Ok(serde_json::to_string_pretty(&archive)?)
}

pub fn from_json(text: &str) -> Result<FittedModel> {
    let a: Archive = serde_json::from_str(text)?;
    if a.format != FORMAT {
        return Err(Error::InvalidConfig(format!(
            "not a model archive (format {:?})",
            a.format
        )));
    }
    if a.version != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch {
            found: a.version,
            expected: ARCHIVE_VERSION,
        });
    }
    let points = a.points.into_matrix("points")?;
    let temperatures = a.temperatures.into_matrix("temperatures")?;
    if points.shape() != temperatures.shape() || a.alpha.len() != points.nrows() {
        return Err(Error::DimensionMismatch(
            "archive shapes are inconsistent".into(),
        ));
    }
    Ok(FittedModel {
        alpha: DVector::from_vec(a.alpha),
        params: DsoftkiParams {
            kernel: a.kernel,
            field: InterpField {
                points,
                temperatures,
                eps: a.eps,
                shared_temperature: a.shared_temperature,
            },
            noise: a.noise,
        },
        norm: a.norm,
        observations: if a.value_only {
            Observations::ValuesOnly
        } else {
            Observations::ValuesAndGradients
        },
        r: a.r.into_matrix("r")?,
        jitter: a.jitter,
    })
}

pub fn save_model(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
