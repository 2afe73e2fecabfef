//! File formats: the binary series container, JSON model documents, TOML
//! simulation configs, and versioned CSV tables.
//!
//! # Series container
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic   8 bytes   "TSERIES1"
//! order   u32       number of tensor modes n
//! dims    n × u32   mode sizes q_1..q_n
//! length  u64       number of time steps T
//! payload T·Πq_i × f64   vectorized tensors, column-major each
//! ```
//!
//! # CSV tables
//!
//! Every CSV starts with a single schema cell in row 1 (for example
//! `tensar-scores-v1`), followed by a header row and data rows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::als::FitReport;
use crate::model::{
    CpLoadings, LowRankCoef, ModelError, SparseCoef, TensorSeries, Variant,
};
use crate::sim::{DgpSpec, RateDiagnostics, SimError};
use crate::tensor::{DenseTensor, Matrix, TensorError};

pub const SERIES_MAGIC: &[u8; 8] = b"TSERIES1";
pub const MODEL_SCHEMA: &str = "tensar-model-v1";
pub const SCORES_SCHEMA: &str = "tensar-scores-v1";
pub const RATE_SUMMARY_SCHEMA: &str = "tensar-rate-summary-v1";
pub const RATE_REPS_SCHEMA: &str = "tensar-rate-reps-v1";
pub const METRICS_SCHEMA: &str = "tensar-forecast-metrics-v1";

/// Hard cap on the entry count of a single tensor read from disk.
const MAX_ELEMENTS: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("not a TSERIES1 file (bad magic)")]
    BadMagic,
    #[error("truncated file: needed {want} more bytes")]
    Truncated { want: usize },
    #[error("dimension overflow or empty dimension in header")]
    DimOverflow,
    #[error("refusing to write an empty series")]
    EmptySeries,
    #[error("malformed model document: {0}")]
    BadModel(String),
    #[error("malformed config: {0}")]
    BadConfig(String),
    #[error("csv import: {0}")]
    BadCsv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Writes a series in the binary container format. Rejects empty series.
pub fn write_series(series: &TensorSeries, path: &Path) -> Result<(), IoError> {
    if series.is_empty() {
        return Err(IoError::EmptySeries);
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SERIES_MAGIC)?;
    let dims = series.shape();
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(series.len() as u64).to_le_bytes())?;
    for obs in series.observations() {
        for v in obs.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a series from the binary container format; bad magic, truncation,
/// and dimension overflow are distinct errors.
pub fn read_series(path: &Path) -> Result<TensorSeries, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if &magic != SERIES_MAGIC {
        return Err(IoError::BadMagic);
    }
    let order = read_u32(&mut r)? as usize;
    if order == 0 || order > 64 {
        return Err(IoError::DimOverflow);
    }
    let mut dims = Vec::with_capacity(order);
    let mut total: u64 = 1;
    for _ in 0..order {
        let d = read_u32(&mut r)? as u64;
        if d == 0 {
            return Err(IoError::DimOverflow);
        }
        total = total.checked_mul(d).ok_or(IoError::DimOverflow)?;
        if total > MAX_ELEMENTS {
            return Err(IoError::DimOverflow);
        }
        dims.push(d as usize);
    }
    let t_len = read_u64(&mut r)?;
    if t_len == 0 || t_len.checked_mul(total).map_or(true, |n| n > MAX_ELEMENTS) {
        return Err(IoError::DimOverflow);
    }
    let q = total as usize;
    let mut obs = Vec::with_capacity(t_len as usize);
    let mut buf = vec![0u8; q * 8];
    for _ in 0..t_len {
        read_exact_or_truncated(&mut r, &mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        obs.push(DenseTensor::new(dims.clone(), data)?);
    }
    Ok(TensorSeries::new(obs)?)
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), IoError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IoError::Truncated { want: buf.len() }
        } else {
            IoError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, IoError> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, IoError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Imports a series from CSV: one row per time step, `Πq_i` columns in
/// column-major vectorization order.
pub fn read_series_csv(
    path: &Path,
    dims: &[usize],
    has_header: bool,
) -> Result<TensorSeries, IoError> {
    let q: usize = dims.iter().product();
    if q == 0 {
        return Err(IoError::DimOverflow);
    }
    let content = std::fs::read_to_string(path)?;
    let mut obs = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if lineno == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let values: Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let values = values.map_err(|e| {
            IoError::BadCsv(format!("line {}: {e}", lineno + 1))
        })?;
        if values.len() != q {
            return Err(IoError::BadCsv(format!(
                "line {}: expected {q} values, got {}",
                lineno + 1,
                values.len()
            )));
        }
        obs.push(DenseTensor::new(dims.to_vec(), values)?);
    }
    if obs.is_empty() {
        return Err(IoError::EmptySeries);
    }
    Ok(TensorSeries::new(obs)?)
}

/// Serializable model document: factor matrices row-major, the core
/// row-major, sparse entries as multi-index/value pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    pub variant: Variant,
    pub lag_order: usize,
    pub response_dims: Vec<usize>,
    pub covariate_dims: Vec<usize>,
    pub rank_y: usize,
    pub rank_x: usize,
    pub response_factors: Vec<Vec<Vec<f64>>>,
    pub covariate_factors: Vec<Vec<Vec<f64>>>,
    pub core: Vec<Vec<f64>>,
    #[serde(default)]
    pub sparse: Option<Vec<(Vec<usize>, f64)>>,
    #[serde(default)]
    pub metadata: ModelMetadata,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub final_loss: Option<f64>,
    pub rng_seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    pub report: Option<FitReport>,
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix, IoError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(IoError::BadModel("empty matrix".into()));
    }
    let n_rows = rows.len();
    let n_cols = rows[0].len();
    let mut m = Matrix::zeros(n_rows, n_cols);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != n_cols {
            return Err(IoError::BadModel("ragged matrix rows".into()));
        }
        for (c, &v) in row.iter().enumerate() {
            m.set(r, c, v);
        }
    }
    Ok(m)
}

impl ModelFile {
    pub fn from_parts(
        coef: &LowRankCoef,
        sparse: Option<&SparseCoef>,
        metadata: ModelMetadata,
    ) -> Self {
        let (rank_y, rank_x) = coef.ranks();
        Self {
            schema: MODEL_SCHEMA.to_string(),
            variant: coef.variant(),
            lag_order: coef.lag_order(),
            response_dims: coef.response_loadings().dims(),
            covariate_dims: coef.covariate_loadings().dims(),
            rank_y,
            rank_x,
            response_factors: coef
                .response_loadings()
                .factors()
                .iter()
                .map(matrix_to_rows)
                .collect(),
            covariate_factors: coef
                .covariate_loadings()
                .factors()
                .iter()
                .map(matrix_to_rows)
                .collect(),
            core: matrix_to_rows(coef.core()),
            sparse: sparse.map(|s| s.iter_multi().collect()),
            metadata,
        }
    }

    pub fn into_parts(&self) -> Result<(LowRankCoef, Option<SparseCoef>), IoError> {
        if self.schema != MODEL_SCHEMA {
            return Err(IoError::BadModel(format!(
                "unsupported schema {:?}",
                self.schema
            )));
        }
        let response = CpLoadings::new(
            self.response_factors
                .iter()
                .map(|f| matrix_from_rows(f))
                .collect::<Result<_, _>>()?,
        )?;
        let covariate = CpLoadings::new(
            self.covariate_factors
                .iter()
                .map(|f| matrix_from_rows(f))
                .collect::<Result<_, _>>()?,
        )?;
        let core = matrix_from_rows(&self.core)?;
        let coef = LowRankCoef::new(response, covariate, core, self.lag_order, self.variant)?;
        let sparse = match &self.sparse {
            None => None,
            Some(entries) => Some(SparseCoef::from_multi_entries(
                &self.response_dims,
                self.lag_order,
                entries.iter().cloned(),
            )?),
        };
        Ok((coef, sparse))
    }
}

pub fn write_model(model: &ModelFile, path: &Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(model)
        .map_err(|e| IoError::BadModel(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile, IoError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::BadModel(e.to_string()))
}

/// TOML simulation config: the DGP fields plus a series length and an
/// optional experiment section.
#[derive(Debug, Clone, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub dgp: DgpSpec,
    pub length: usize,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentSection {
    /// One of `vary_t`, `vary_ranks`, `vary_dims`, `vary_alpha`.
    pub design: String,
    pub values: Vec<f64>,
    pub replications: usize,
    /// `low_rank` (default) or `low_rank_plus_sparse`.
    #[serde(default)]
    pub estimator: Option<String>,
}

pub fn read_simulate_config(path: &Path) -> Result<SimulateConfig, IoError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| IoError::BadConfig(e.to_string()))
}

impl ExperimentSection {
    pub fn to_design(&self) -> Result<crate::sim::RateDesign, SimError> {
        let ints = || -> Result<Vec<usize>, SimError> {
            self.values
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && v >= 1.0 {
                        Ok(v as usize)
                    } else {
                        Err(SimError::BadSpec(format!(
                            "design value {v} must be a positive integer"
                        )))
                    }
                })
                .collect()
        };
        match self.design.as_str() {
            "vary_t" | "vary-t" => Ok(crate::sim::RateDesign::VaryT(ints()?)),
            "vary_ranks" | "vary-ranks" => Ok(crate::sim::RateDesign::VaryRanks(ints()?)),
            "vary_dims" | "vary-dims" => Ok(crate::sim::RateDesign::VaryDims(ints()?)),
            "vary_alpha" | "vary-alpha" => {
                Ok(crate::sim::RateDesign::VaryAlpha(self.values.clone()))
            }
            other => Err(SimError::BadSpec(format!("unknown design {other:?}"))),
        }
    }

    pub fn to_estimator(&self) -> Result<crate::selection::EstimatorKind, SimError> {
        match self.estimator.as_deref() {
            None | Some("low_rank") | Some("lowrank") => {
                Ok(crate::selection::EstimatorKind::LowRank)
            }
            Some("low_rank_plus_sparse") | Some("lrs") => {
                Ok(crate::selection::EstimatorKind::LowRankPlusSparse)
            }
            Some(other) => Err(SimError::BadSpec(format!("unknown estimator {other:?}"))),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Score table CSV: schema row, header, one row per evaluated cell.
pub fn write_scores_csv(rows: &[crate::selection::ScoreRow], path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SCORES_SCHEMA}")?;
    writeln!(w, "p,r_y,r_x,lambda,msfe,mafe,d_ar")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.p,
            r.r_y,
            r.r_x,
            fmt_opt(r.lambda),
            r.msfe,
            r.mafe,
            r.d_ar
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Rate-experiment CSVs: a per-cell summary and a per-replication table.
pub fn write_rate_csv(
    diag: &RateDiagnostics,
    summary_path: &Path,
    reps_path: &Path,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(summary_path)?);
    writeln!(w, "{RATE_SUMMARY_SCHEMA}")?;
    writeln!(
        w,
        "design,cell,abscissa,mean_error,replications_ok,failures,d_ar,d_c,mean_tpr,mean_fpr,correlation,seed"
    )?;
    for c in &diag.cells {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            diag.design,
            c.label,
            c.abscissa,
            c.mean_error,
            c.replications_ok,
            c.failures,
            c.d_ar,
            c.d_c,
            fmt_opt(c.mean_tpr),
            fmt_opt(c.mean_fpr),
            fmt_opt(diag.correlation),
            diag.seed
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(reps_path)?);
    writeln!(w, "{RATE_REPS_SCHEMA}")?;
    writeln!(w, "design,cell,replication,error")?;
    for c in &diag.cells {
        for (i, e) in c.errors.iter().enumerate() {
            writeln!(w, "{},{},{},{}", diag.design, c.label, i, e)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Forecast metrics document; the MSFE is normalized per entry, which is
/// recorded in the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema: String,
    pub msfe: f64,
    pub mafe: f64,
    pub steps: usize,
    pub first_target: usize,
    pub normalization: String,
}

impl MetricsFile {
    pub fn new(report: &crate::selection::ForecastReport) -> Self {
        Self {
            schema: METRICS_SCHEMA.to_string(),
            msfe: report.msfe,
            mafe: report.mafe,
            steps: report.predictions.len(),
            first_target: report.first_target,
            normalization: "per-entry mean over steps and entries".to_string(),
        }
    }
}

pub fn write_metrics(metrics: &MetricsFile, path: &Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(metrics)
        .map_err(|e| IoError::BadModel(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
