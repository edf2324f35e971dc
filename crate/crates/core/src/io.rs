//! CSV ingestion and the JSON report schemas of the command-line interface.
//!
//! Input tables are RFC-4180 CSV with a header row; a missing response is an
//! empty field or the literal `NA`. Covariates must be fully observed.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::IncompleteDataset;
use crate::kernel::CovariateMatrix;

/// A parsed dataset with its column names.
#[derive(Debug)]
pub struct CsvDataset {
    pub covariate_names: Vec<String>,
    pub response_name: String,
    pub data: IncompleteDataset,
    pub studentized: bool,
}

/// Read a CSV with a named response column; every other column is a
/// covariate, in file order. With `studentize`, covariate columns are
/// centered and scaled over all rows and the response over its observed
/// entries only (so a fully observed response has sample mean exactly 0).
pub fn read_incomplete_csv(
    path: &Path,
    response_col: &str,
    studentize: bool,
) -> Result<CsvDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let resp_idx = headers
        .iter()
        .position(|h| h == response_col)
        .ok_or_else(|| Error::Data(format!("response column '{response_col}' not found")))?;
    let covariate_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != resp_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let p = covariate_names.len();
    if p == 0 {
        return Err(Error::Data("no covariate columns in input".into()));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut delta: Vec<bool> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Data(format!("row {}: {e}", row_idx + 1)))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {}: expected {} fields, got {}",
                row_idx + 1,
                headers.len(),
                record.len()
            )));
        }
        for (col_idx, field) in record.iter().enumerate() {
            if col_idx == resp_idx {
                if field.is_empty() || field == "NA" {
                    ys.push(f64::NAN);
                    delta.push(false);
                } else {
                    let v: f64 = field.parse().map_err(|_| {
                        Error::Data(format!(
                            "row {}, column '{}': cannot parse '{}' as a number",
                            row_idx + 1,
                            headers[col_idx],
                            field
                        ))
                    })?;
                    ys.push(v);
                    delta.push(true);
                }
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}, column '{}': cannot parse '{}' as a number",
                        row_idx + 1,
                        headers[col_idx],
                        field
                    ))
                })?;
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::Data("input has no data rows".into()));
    }
    if !delta.iter().any(|&d| d) {
        return Err(Error::Data("response column has no observed values".into()));
    }

    let mut x = Array2::from_shape_vec((n, p), xs)
        .map_err(|e| Error::Data(format!("ragged input: {e}")))?;
    let mut y = Array1::from(ys);
    if studentize {
        studentize_columns(&mut x);
        studentize_response(&mut y, &delta);
    }
    let x = CovariateMatrix::new(x)?;
    let data = IncompleteDataset::new(x, y, delta)?;
    Ok(CsvDataset {
        covariate_names,
        response_name: response_col.to_string(),
        data,
        studentized: studentize,
    })
}

/// (value − column mean)/column sample standard deviation per column;
/// constant columns become all-zero.
fn studentize_columns(x: &mut Array2<f64>) {
    let n = x.nrows();
    for mut col in x.columns_mut() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n as f64 - 1.0).max(1.0);
        let sd = var.sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
}

fn studentize_response(y: &mut Array1<f64>, delta: &[bool]) {
    let observed: Vec<f64> = y
        .iter()
        .zip(delta)
        .filter(|(_, &d)| d)
        .map(|(v, _)| *v)
        .collect();
    let m = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / m;
    let var =
        observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0).max(1.0);
    let sd = var.sqrt();
    for (v, &d) in y.iter_mut().zip(delta) {
        if d {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// JSON report of `aipw estimate`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub p: usize,
    pub response_rate: f64,
    pub theta_hat: f64,
    pub sigma2_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// 1-based positions among the covariate columns.
    pub selected_indices: Vec<usize>,
    pub selected_covariates: Vec<String>,
    pub threshold: f64,
    pub no_signal: bool,
    pub propensity_nonzero_groups: Vec<Vec<String>>,
    pub lambda2: Option<f64>,
    pub small_propensity_count: usize,
    pub studentized: bool,
}

/// JSON report of `aipw select`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SelectReport {
    pub n_complete: usize,
    pub p: usize,
    pub gradient_norms: Vec<f64>,
    pub threshold: f64,
    pub no_signal: bool,
    /// 1-based positions among the covariate columns.
    pub active_indices: Vec<usize>,
    pub active_covariates: Vec<String>,
}
