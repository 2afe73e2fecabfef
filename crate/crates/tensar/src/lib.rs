//! CP-based low-rank (plus sparse) autoregression for tensor-valued time
//! series: model assembly, alternating least squares estimation,
//! l1-regularized low-rank-plus-sparse estimation, hold-out hyperparameter
//! selection, rolling forecasts, and a Monte-Carlo experiment harness.

pub mod als;
pub mod io;
pub mod lrs;
pub mod model;
pub mod selection;
pub mod sim;
pub mod tensor;

mod linalg;

pub use als::{AlsConfig, AlsState, EstimVariant, FitError, FitReport};
pub use lrs::{LrsConfig, PenalizedObjective};
pub use selection::{
    EstimatorKind, FittedModel, ForecastReport, Forecaster, HoldoutPlan, ScoreRow,
    SelectError, SelectedConfig, SelectionResult,
};
pub use sim::{
    DgpSpec, ErrorKind, RateCell, RateDesign, RateDiagnostics, RateExperiment, SimError, TprFpr,
};
pub use model::{
    CpLoadings, DegeneracyReport, LowRankCoef, ModelError, SparseCoef, TensorSeries, Variant,
};
pub use tensor::{DenseTensor, Matrix, TensorError};
