use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the estimation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset contains no rows")]
    EmptyData,

    #[error("invalid fold plan: {0}")]
    InvalidPlan(String),

    #[error("invalid target interval: {0}")]
    InvalidInterval(String),

    #[error("insufficient local support: {have} in-window points at a = {at} (need {need})")]
    InsufficientSupport { at: f64, have: usize, need: usize },

    #[error("rank-deficient local fit at a = {at} (condition estimate {cond:.3e})")]
    RankDeficient { at: f64, cond: f64 },

    #[error("bandwidth selection failed; no grid value had full support (failing h: {failing:?})")]
    BandwidthSelection { failing: Vec<f64> },

    #[error("conditioning failure: {0}")]
    Conditioning(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("low density at query point (denominator {denominator:.3e})")]
    LowDensity { denominator: f64 },

    #[error("nuisance training failed for component '{component}': {message}")]
    NuisanceTraining { component: String, message: String },

    #[error("cross-fitting failed in fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("propensity below floor: Delta = {0:.3e}")]
    Propensity(f64),

    #[error("coverage gap: no passing radius at a = {at}")]
    CoverageGap { at: f64 },

    #[error("probability tables invalid: {0}")]
    SpecError(String),

    #[error("benchmark failed: {0}")]
    Benchmark(String),

    #[error("bootstrap failed: {failed} of {total} replicates errored")]
    Bootstrap { failed: usize, total: usize },

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}
