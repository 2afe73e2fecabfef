//! Hold-out hyperparameter selection, rolling one-step-ahead forecasts,
//! and forecast accuracy metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::als::{als_fit, AlsConfig, EstimVariant, FitError};
use crate::lrs::{lrs_fit, LrsConfig};
use crate::model::{
    complexity_d_ar, LowRankCoef, ModelError, SparseCoef, TensorSeries,
};
use crate::tensor::DenseTensor;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("estimator failed at rolling step {step}: {source}")]
    EstimatorFailed {
        step: usize,
        #[source]
        source: FitError,
    },
    #[error("rolling window is empty: start {start} must lie in ({min_start}, {len})")]
    InvalidWindow {
        start: usize,
        min_start: usize,
        len: usize,
    },
    #[error("series length {len} cannot host train {train} + validation {val}")]
    BadSplit { len: usize, train: usize, val: usize },
    #[error("selection grid is empty")]
    EmptyGrid,
    #[error("length or shape mismatch between prediction and actual series")]
    SeriesMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Anything that can produce a one-step-ahead forecast from a history.
pub trait Forecaster {
    fn forecast_next(&self, history: &TensorSeries) -> Result<DenseTensor, FitError>;
}

/// A fitted low-rank (plus optional sparse) model, ready for forecasting.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub coef: LowRankCoef,
    pub sparse: Option<SparseCoef>,
}

impl Forecaster for FittedModel {
    fn forecast_next(&self, history: &TensorSeries) -> Result<DenseTensor, FitError> {
        let p = self.coef.lag_order();
        let lags = history
            .lag_window(history.len(), p)
            .ok_or(FitError::SeriesTooShort {
                t: history.len(),
                p,
            })?;
        Ok(self.coef.predict_one_step(&lags, self.sparse.as_ref())?)
    }
}

/// One-step-ahead predictions over a window plus their accuracy.
#[derive(Debug, Clone)]
pub struct ForecastReport {
    pub predictions: TensorSeries,
    /// Index (0-based) of the first predicted observation.
    pub first_target: usize,
    /// Mean squared forecast error, normalized per entry.
    pub msfe: f64,
    /// Mean absolute forecast error per entry.
    pub mafe: f64,
}

/// Rolling one-step-ahead evaluation with refitting: for every prefix
/// length `t` in `start..T`, fits on the first `t` observations and
/// predicts observation `t` (0-based). `start` is therefore the length of
/// the first training window.
pub fn rolling_forecast<M, F>(
    series: &TensorSeries,
    start: usize,
    fit: F,
) -> Result<ForecastReport, SelectError>
where
    M: Forecaster,
    F: Fn(&TensorSeries) -> Result<M, FitError> + Sync,
{
    let len = series.len();
    if start == 0 || start >= len {
        return Err(SelectError::InvalidWindow {
            start,
            min_start: 1,
            len,
        });
    }
    let mut predictions = Vec::with_capacity(len - start);
    for t in start..len {
        let history = series.prefix(t)?;
        let model = fit(&history).map_err(|source| SelectError::EstimatorFailed {
            step: t,
            source,
        })?;
        let pred = model
            .forecast_next(&history)
            .map_err(|source| SelectError::EstimatorFailed { step: t, source })?;
        predictions.push(pred);
    }
    let predictions = TensorSeries::new(predictions)?;
    let actual = TensorSeries::new(series.observations()[start..].to_vec())?;
    let (msfe, mafe) = forecast_metrics(&predictions, &actual)?;
    Ok(ForecastReport {
        predictions,
        first_target: start,
        msfe,
        mafe,
    })
}

/// Forecast accuracy: `msfe` is the mean over steps of the squared error
/// norm divided by the entry count, `mafe` the mean absolute entry error.
pub fn forecast_metrics(
    pred: &TensorSeries,
    actual: &TensorSeries,
) -> Result<(f64, f64), SelectError> {
    if pred.len() != actual.len() || pred.shape() != actual.shape() {
        return Err(SelectError::SeriesMismatch);
    }
    let q: usize = pred.shape().iter().product();
    let steps = pred.len();
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (p, a) in pred.observations().iter().zip(actual.observations()) {
        for (x, y) in p.data().iter().zip(a.data()) {
            let e = x - y;
            sq += e * e;
            abs += e.abs();
        }
    }
    let denom = (q * steps) as f64;
    Ok((sq / denom, abs / denom))
}

/// Which estimator the hold-out selection evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    LowRank,
    LowRankPlusSparse,
}

/// Grid bounds and data split for hold-out selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutPlan {
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: Option<usize>,
    pub p_max: usize,
    pub r_y_max: usize,
    pub r_x_max: usize,
    /// Penalty candidates for the sparse component; `None` keeps the
    /// low-rank-only grid.
    pub lambda_grid: Option<Vec<f64>>,
    /// When false (default), the sparse model reuses the order and ranks
    /// chosen for the low-rank model and only scans the penalty; when
    /// true, the full product grid is searched.
    pub joint_lambda: bool,
}

impl HoldoutPlan {
    pub fn new(train_len: usize, val_len: usize) -> Self {
        Self {
            train_len,
            val_len,
            test_len: None,
            p_max: 12,
            r_y_max: 12,
            r_x_max: 12,
            lambda_grid: None,
            joint_lambda: false,
        }
    }

    fn validate(&self, series_len: usize) -> Result<(), SelectError> {
        if self.p_max == 0 || self.r_y_max == 0 || self.r_x_max == 0 {
            return Err(SelectError::EmptyGrid);
        }
        if self.train_len == 0
            || self.val_len == 0
            || self.train_len + self.val_len > series_len
        {
            return Err(SelectError::BadSplit {
                len: series_len,
                train: self.train_len,
                val: self.val_len,
            });
        }
        Ok(())
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub p: usize,
    pub r_y: usize,
    pub r_x: usize,
    pub lambda: Option<f64>,
    pub msfe: f64,
    pub mafe: f64,
    pub d_ar: usize,
}

/// The chosen configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectedConfig {
    pub p: usize,
    pub r_y: usize,
    pub r_x: usize,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub best: SelectedConfig,
    pub table: Vec<ScoreRow>,
}

/// Exhaustive hold-out selection: every grid cell is scored by the MSFE of
/// a rolling forecast over the validation window (training windows grow
/// from `train_len`). Ties go to the smaller model complexity
/// `d_AR = P R_y R_x + (R_y + R_x) Σ q_i`, then lexicographic order.
pub fn holdout_select(
    series: &TensorSeries,
    plan: &HoldoutPlan,
    kind: EstimatorKind,
    als: &AlsConfig,
    lrs: &LrsConfig,
) -> Result<SelectionResult, SelectError> {
    plan.validate(series.len())?;
    let eval_series = series.prefix(plan.train_len + plan.val_len)?;
    let dims = series.shape().to_vec();

    let rank_cells: Vec<(usize, usize, usize)> = (1..=plan.p_max)
        .flat_map(|p| {
            (1..=plan.r_y_max)
                .flat_map(move |ry| (1..=plan.r_x_max).map(move |rx| (p, ry, rx)))
        })
        .collect();

    match kind {
        EstimatorKind::LowRank => {
            let rows = score_cells(&eval_series, plan, &rank_cells, None, als, lrs, kind)?;
            let best = pick_best(&rows, &dims)?;
            Ok(SelectionResult { best, table: rows })
        }
        EstimatorKind::LowRankPlusSparse => {
            let lambdas = plan
                .lambda_grid
                .clone()
                .unwrap_or_else(|| crate::lrs::LAMBDA_GRID.to_vec());
            if plan.joint_lambda {
                let mut rows = Vec::new();
                for &lambda in &lambdas {
                    rows.extend(score_cells(
                        &eval_series,
                        plan,
                        &rank_cells,
                        Some(lambda),
                        als,
                        lrs,
                        kind,
                    )?);
                }
                let best = pick_best(&rows, &dims)?;
                Ok(SelectionResult { best, table: rows })
            } else {
                // stage 1: ranks via the low-rank model, stage 2: penalty scan
                let mut rows = score_cells(
                    &eval_series,
                    plan,
                    &rank_cells,
                    None,
                    als,
                    lrs,
                    EstimatorKind::LowRank,
                )?;
                let ranks = pick_best(&rows, &dims)?;
                let lam_cells = vec![(ranks.p, ranks.r_y, ranks.r_x)];
                let mut lam_rows = Vec::new();
                for &lambda in &lambdas {
                    lam_rows.extend(score_cells(
                        &eval_series,
                        plan,
                        &lam_cells,
                        Some(lambda),
                        als,
                        lrs,
                        kind,
                    )?);
                }
                let best = pick_best(&lam_rows, &dims)?;
                rows.extend(lam_rows);
                Ok(SelectionResult { best, table: rows })
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn score_cells(
    eval_series: &TensorSeries,
    plan: &HoldoutPlan,
    cells: &[(usize, usize, usize)],
    lambda: Option<f64>,
    als: &AlsConfig,
    lrs: &LrsConfig,
    kind: EstimatorKind,
) -> Result<Vec<ScoreRow>, SelectError> {
    let dims = eval_series.shape().to_vec();
    let rows: Vec<Result<ScoreRow, SelectError>> = cells
        .par_iter()
        .map(|&(p, r_y, r_x)| {
            let report = match (kind, lambda) {
                (EstimatorKind::LowRank, _) => {
                    rolling_forecast(eval_series, plan.train_len, |hist| {
                        let (coef, _) =
                            als_fit(hist, p, r_y, r_x, als, EstimVariant::SharedLags)?;
                        Ok(FittedModel { coef, sparse: None })
                    })?
                }
                (EstimatorKind::LowRankPlusSparse, lam) => {
                    let mut config = lrs.clone();
                    config.als = als.clone();
                    if let Some(l) = lam {
                        config.lambda = l;
                    }
                    rolling_forecast(eval_series, plan.train_len, move |hist| {
                        let (coef, sparse, _) = lrs_fit(hist, p, r_y, r_x, &config)?;
                        Ok(FittedModel {
                            coef,
                            sparse: Some(sparse),
                        })
                    })?
                }
            };
            Ok(ScoreRow {
                p,
                r_y,
                r_x,
                lambda,
                msfe: report.msfe,
                mafe: report.mafe,
                d_ar: complexity_d_ar(p, r_y, r_x, &dims),
            })
        })
        .collect();
    rows.into_iter().collect()
}

fn pick_best(rows: &[ScoreRow], dims: &[usize]) -> Result<SelectedConfig, SelectError> {
    let _ = dims;
    rows.iter()
        .min_by(|a, b| {
            let ka = if a.msfe.is_nan() { f64::INFINITY } else { a.msfe };
            let kb = if b.msfe.is_nan() { f64::INFINITY } else { b.msfe };
            ka.partial_cmp(&kb)
                .unwrap()
                .then(a.d_ar.cmp(&b.d_ar))
                .then(a.p.cmp(&b.p))
                .then(a.r_y.cmp(&b.r_y))
                .then(a.r_x.cmp(&b.r_x))
                .then(
                    a.lambda
                        .unwrap_or(f64::INFINITY)
                        .partial_cmp(&b.lambda.unwrap_or(f64::INFINITY))
                        .unwrap(),
                )
        })
        .map(|r| SelectedConfig {
            p: r.p,
            r_y: r.r_y,
            r_x: r.r_x,
            lambda: r.lambda,
        })
        .ok_or(SelectError::EmptyGrid)
}
