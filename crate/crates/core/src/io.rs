//! On-disk formats: a `dataset.json` manifest next to headerless CSV files,
//! fitted models as JSON, and prediction tables.
//!
//! `Y.csv` is `n x m`; `Z.csv` is `nm x p0` and `X.csv` is `nm x prod(dims)`,
//! both with rows in subject-major order and `X` rows holding `vec(X_ij)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlation::{CorrKind, WorkingCorrelation};
use crate::data::LongitudinalDataset;
use crate::error::{Result, TgeeError};
use crate::family::Family;
use crate::penalty::Penalty;
use crate::solver::FitResult;
use crate::tensor::{CpModel, DenseTensor};

pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    pub m: usize,
    pub p0: usize,
    pub dims: Vec<usize>,
    pub family: String,
    #[serde(default = "default_y")]
    pub y: String,
    #[serde(default = "default_z")]
    pub z: String,
    #[serde(default = "default_x")]
    pub x: String,
}

fn default_y() -> String {
    "Y.csv".into()
}
fn default_z() -> String {
    "Z.csv".into()
}
fn default_x() -> String {
    "X.csv".into()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Writes a row-major `rows x cols` block as headerless CSV.
pub fn write_matrix(path: &Path, values: &[f64], cols: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in values.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless numeric CSV that must be exactly `rows x cols`,
/// returned row-major.
pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let file = display(path);
    let parse_err = |msg: String| TgeeError::Parse { file: file.clone(), msg };
    if cols == 0 {
        // nothing to read, but the file must still be present
        std::fs::metadata(path).map_err(|e| parse_err(e.to_string()))?;
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(e.to_string()))?;
    let mut out = Vec::with_capacity(rows * cols);
    let mut found = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let width = if rec.len() == 1 && rec[0].is_empty() { 0 } else { rec.len() };
        if width != cols {
            return Err(parse_err(format!(
                "row {} has {width} columns, expected {cols} (shape {rows}x{cols})",
                r + 1
            )));
        }
        for c in 0..width {
            let cell = &rec[c];
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!("non-numeric cell '{cell}' at row {}, column {}", r + 1, c + 1))
            })?;
            out.push(v);
        }
        found += 1;
    }
    if found != rows {
        return Err(parse_err(format!("expected {rows}x{cols}, found {found} rows")));
    }
    Ok(out)
}

pub fn save_dataset(data: &LongitudinalDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        n: data.n(),
        m: data.m(),
        p0: data.p0(),
        dims: data.dims().to_vec(),
        family: data.family().name().into(),
        y: default_y(),
        z: default_z(),
        x: default_x(),
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    write_matrix(&dir.join(&manifest.y), data.y(), data.m())?;
    write_matrix(&dir.join(&manifest.z), data.z_all(), data.p0())?;
    write_matrix(&dir.join(&manifest.x), data.x_all(), data.tensor_len())?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| TgeeError::Parse { file: display(&path), msg: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| TgeeError::Parse { file: display(&path), msg: e.to_string() })
}

pub fn load_dataset(dir: &Path) -> Result<LongitudinalDataset> {
    let man = load_manifest(dir)?;
    let family: Family = man.family.parse()?;
    let size: usize = man.dims.iter().product();
    let nobs = man.n * man.m;
    let resolve = |f: &str| -> PathBuf { dir.join(f) };
    let y = read_matrix(&resolve(&man.y), man.n, man.m)?;
    let z = read_matrix(&resolve(&man.z), nobs, man.p0)?;
    let x = read_matrix(&resolve(&man.x), nobs, size)?;
    LongitudinalDataset::new(man.n, man.m, man.p0, man.dims, family, y, z, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrRecord {
    pub kind: CorrKind,
    pub rho: Option<f64>,
    /// Rows of `R`.
    pub matrix: Vec<Vec<f64>>,
}

/// Serialized fit. Factors are column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: Family,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub factors: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub corr: CorrRecord,
    #[serde(default)]
    pub penalty: Penalty,
    #[serde(default)]
    pub lambda: f64,
    pub converged: bool,
    pub outer_iters: usize,
    pub ee_norm: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ModelFile {
    pub fn from_fit(fit: &FitResult) -> Self {
        let wc = &fit.wc;
        Self {
            family: fit.family,
            dims: fit.model.dims(),
            rank: fit.model.rank(),
            factors: fit.model.factors().iter().map(|f| f.as_slice().to_vec()).collect(),
            gamma: fit.gamma.clone(),
            corr: CorrRecord {
                kind: wc.kind,
                rho: wc.param,
                matrix: wc.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
            },
            penalty: fit.penalty,
            lambda: fit.lambda,
            converged: fit.converged,
            outer_iters: fit.outer_iters,
            ee_norm: fit.ee_norm,
            warnings: fit.warnings.clone(),
        }
    }

    pub fn to_fit(&self) -> Result<FitResult> {
        if self.factors.len() != self.dims.len() {
            return Err(TgeeError::DimensionMismatch(format!(
                "{} factors for a {}-way tensor",
                self.factors.len(),
                self.dims.len()
            )));
        }
        let factors = self
            .factors
            .iter()
            .zip(&self.dims)
            .map(|(v, &p)| {
                if v.len() != p * self.rank {
                    return Err(TgeeError::DimensionMismatch(format!(
                        "factor has {} entries, expected {}x{}",
                        v.len(),
                        p,
                        self.rank
                    )));
                }
                Ok(DMatrix::from_column_slice(p, self.rank, v))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = self.corr.matrix.len();
        if self.corr.matrix.iter().any(|r| r.len() != m) {
            return Err(TgeeError::DimensionMismatch("correlation matrix is not square".into()));
        }
        let matrix = DMatrix::from_fn(m, m, |j, k| self.corr.matrix[j][k]);
        let wc = match self.corr.kind {
            CorrKind::Unstructured => WorkingCorrelation::unstructured(matrix)?,
            kind => WorkingCorrelation::structured(kind, m, self.corr.rho)?,
        };
        Ok(FitResult {
            model: CpModel::new(factors)?,
            gamma: self.gamma.clone(),
            wc,
            family: self.family,
            penalty: self.penalty,
            lambda: self.lambda,
            converged: self.converged,
            outer_iters: self.outer_iters,
            ee_norm: self.ee_norm,
            objective_trace: Vec::new(),
            warnings: self.warnings.clone(),
        })
    }
}

pub fn save_model(fit: &FitResult, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(&ModelFile::from_fit(fit))?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TgeeError::Parse { file: display(path), msg: e.to_string() })?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| TgeeError::Parse { file: display(path), msg: e.to_string() })?;
    file.to_fit()
}

/// One prediction per observation; subject and time are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub subject: usize,
    pub time: usize,
    pub y: f64,
    pub eta: f64,
    pub mu: f64,
}

pub fn predict(fit: &FitResult, data: &LongitudinalDataset) -> Result<Vec<Prediction>> {
    let eta = fit.linear_predictors(data)?;
    let m = data.m();
    Ok(eta
        .iter()
        .enumerate()
        .map(|(k, &e)| Prediction {
            subject: k / m + 1,
            time: k % m + 1,
            y: data.y()[k],
            eta: e,
            mu: fit.family.mean(e),
        })
        .collect())
}

pub fn write_predictions<W: Write>(out: W, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject", "time", "y", "eta", "mu"]).map_err(csv_io)?;
    for p in preds {
        w.write_record([p.subject.to_string(), p.time.to_string(), fmt(p.y), fmt(p.eta), fmt(p.mu)])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> TgeeError {
    TgeeError::Io(std::io::Error::other(e))
}

/// Writes a matrix-valued tensor as a grid (one CSV row per tensor row), or
/// any other order as a single column holding `vec(T)`.
pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    match t.to_matrix() {
        Some(mat) => {
            let rows: Vec<f64> = mat.transpose().as_slice().to_vec();
            write_matrix(path, &rows, mat.ncols())
        }
        None => write_matrix(path, t.vec(), 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let vals = vec![0.1, -1.0 / 3.0, 1e-300, 123456789.123456789, f64::MIN_POSITIVE, 2.0f64.sqrt()];
        write_matrix(&path, &vals, 3).unwrap();
        assert_eq!(read_matrix(&path, 2, 3).unwrap(), vals);
    }

    #[test]
    fn shape_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("Y.csv");
        std::fs::write(&path, "1,2\n3,4\n").unwrap();
        let err = read_matrix(&path, 3, 2).unwrap_err().to_string();
        assert!(err.contains("Y.csv") && err.contains("expected 3x2"), "{err}");
        std::fs::write(&path, "1,2\n3,x\n").unwrap();
        let err = read_matrix(&path, 2, 2).unwrap_err().to_string();
        assert!(err.contains("row 2, column 2"), "{err}");
    }
}
