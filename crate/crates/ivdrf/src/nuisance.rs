//! Weighting functions and nuisance training.
//!
//! The nuisance vector bundles the five functions the scores need:
//! `mu(a, l)`, `rho(l)`, `kappa(a, l)`, `eta(a, l)`, and `delta(a, l)`.
//! `kappa` is the instrument-relevance signal `E[Z_pi | A, L] - E[Z_pi | L]`
//! and is clipped away from zero (sign preserved, clip count logged).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::{CondKde, Kde1d};
use crate::error::{Error, Result};
use crate::spline::{PenalizedSpline, RidgeSelect, SplineFitConfig};

/// Function of `(a, l)`.
pub type PointFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Function of `l` alone.
pub type CovFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Function of `(z, l)`.
pub type InstrumentFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// The weighting function `pi(Z, L)` through which all relevance logic
/// flows.
#[derive(Clone)]
pub struct WeightingFunction {
    kind: WfKind,
    /// Uniform bound metadata: `|pi| <= bound` on the data range.
    pub bound: f64,
    /// Provenance label carried into score vectors.
    pub id: String,
}

#[derive(Clone)]
enum WfKind {
    /// `pi(z, l) = z[j]`.
    RawCoordinate(usize),
    /// `pi(z, l) = z[j]^degree`.
    Polynomial { coord: usize, degree: u32 },
    /// `pi(z, l) = p_hat(a0 | z, l)` from a fitted conditional density.
    ConditionalDensity { a0: f64, model: Arc<CondKde<f64>> },
    /// Exact lookup table of `(z, l) -> value` rows.
    Table(Arc<Vec<(Vec<f64>, Vec<f64>, f64)>>),
    /// Programmatic weighting function (oracle injection, tests).
    Analytic(InstrumentFn),
}

impl std::fmt::Debug for WeightingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeightingFunction")
            .field("id", &self.id)
            .field("bound", &self.bound)
            .finish()
    }
}

impl WeightingFunction {
    pub fn raw_coordinate(coord: usize) -> Self {
        WeightingFunction {
            kind: WfKind::RawCoordinate(coord),
            bound: f64::INFINITY,
            id: format!("coordinate:{coord}"),
        }
    }

    pub fn polynomial(coord: usize, degree: u32) -> Self {
        WeightingFunction {
            kind: WfKind::Polynomial { coord, degree },
            bound: f64::INFINITY,
            id: format!("poly:{coord}^{degree}"),
        }
    }

    pub fn table(rows: Vec<(Vec<f64>, Vec<f64>, f64)>) -> Self {
        let bound = rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        WeightingFunction {
            kind: WfKind::Table(Arc::new(rows)),
            bound,
            id: "table".into(),
        }
    }

    pub fn analytic(id: impl Into<String>, bound: f64, f: InstrumentFn) -> Self {
        WeightingFunction {
            kind: WfKind::Analytic(f),
            bound,
            id: id.into(),
        }
    }

    pub fn conditional_density(a0: f64, model: Arc<CondKde<f64>>, bound: f64) -> Self {
        WeightingFunction {
            kind: WfKind::ConditionalDensity { a0, model },
            bound,
            id: format!("density@{a0}"),
        }
    }

    /// Evaluates `pi(z, l)`.
    pub fn eval(&self, z: &[f64], l: &[f64]) -> Result<f64> {
        let v = match &self.kind {
            WfKind::RawCoordinate(j) => *z
                .get(*j)
                .ok_or_else(|| Error::Misuse(format!("instrument coordinate {j} out of range")))?,
            WfKind::Polynomial { coord, degree } => z
                .get(*coord)
                .ok_or_else(|| {
                    Error::Misuse(format!("instrument coordinate {coord} out of range"))
                })?
                .powi(*degree as i32),
            WfKind::ConditionalDensity { a0, model } => {
                let mut q = Vec::with_capacity(z.len() + l.len());
                q.extend_from_slice(z);
                q.extend_from_slice(l);
                model.pdf_or_zero(*a0, &q)
            }
            WfKind::Table(rows) => {
                let hit = rows.iter().find(|(tz, tl, _)| {
                    tz.len() == z.len()
                        && tl.len() == l.len()
                        && tz.iter().zip(z).all(|(a, b)| (a - b).abs() < 1e-9)
                        && tl.iter().zip(l).all(|(a, b)| (a - b).abs() < 1e-9)
                });
                match hit {
                    Some((_, _, v)) => *v,
                    None => {
                        return Err(Error::Misuse(format!(
                            "weighting table has no entry for z = {z:?}, l = {l:?}"
                        )))
                    }
                }
            }
            WfKind::Analytic(f) => f(z, l),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!(
                "weighting function '{}' non-finite at z = {z:?}, l = {l:?}",
                self.id
            )))
        }
    }

    /// Recomputes the bound as the max absolute value over a dataset.
    pub fn with_bound_from(mut self, data: &Dataset) -> Result<Self> {
        let mut bound: f64 = 0.0;
        for i in 0..data.len() {
            bound = bound.max(self.eval(data.z_row(i), data.l_row(i))?.abs());
        }
        self.bound = bound;
        Ok(self)
    }
}

/// Evaluates `Z_pi = pi(Z_i, L_i)` for every row.
pub fn zpi_column(data: &Dataset, pi: &WeightingFunction) -> Result<Vec<f64>> {
    (0..data.len())
        .map(|i| pi.eval(data.z_row(i), data.l_row(i)))
        .collect()
}

/// Regression learner choice for conditional-mean nuisances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMethod {
    #[default]
    PenalizedSplineTensor,
    LocalLinearProductKernel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub method: RegressionMethod,
    /// Spline degrees of freedom for the treatment coordinate.
    pub df_treatment: usize,
    /// Spline degrees of freedom per covariate coordinate.
    pub df_covariate: usize,
    /// Ridge penalty (spline method).
    pub ridge: RidgeSelect,
    /// Bandwidth multiplier (local linear method).
    pub bandwidth_multiplier: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            method: RegressionMethod::PenalizedSplineTensor,
            df_treatment: 8,
            df_covariate: 3,
            ridge: RidgeSelect::default_gcv(),
            bandwidth_multiplier: 1.0,
        }
    }
}

/// A fitted conditional-mean model `E[y | x]`.
#[derive(Debug, Clone)]
pub enum RegressionModel {
    Spline(PenalizedSpline<f64>),
    LocalLinear(LocalLinearModel),
}

impl RegressionModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            RegressionModel::Spline(m) => m.predict(x),
            RegressionModel::LocalLinear(m) => m.predict(x),
        }
    }
}

/// Local linear regression with a Gaussian product kernel.
#[derive(Debug, Clone)]
pub struct LocalLinearModel {
    x: Vec<f64>,
    dim: usize,
    y: Vec<f64>,
    bandwidths: Vec<Option<f64>>,
}

impl LocalLinearModel {
    fn fit(x: &[f64], dim: usize, y: &[f64], multiplier: f64) -> Result<Self> {
        let n = y.len();
        let mut bandwidths = Vec::with_capacity(dim);
        for j in 0..dim {
            let col: Vec<f64> = (0..n).map(|i| x[i * dim + j]).collect();
            let s = crate::kernel_smooth::silverman_scale(&col) * multiplier;
            bandwidths.push(if s > 0.0 && col.iter().any(|v| *v != col[0]) {
                Some(s)
            } else {
                None
            });
        }
        Ok(LocalLinearModel {
            x: x.to_vec(),
            dim,
            y: y.to_vec(),
            bandwidths,
        })
    }

    pub fn predict(&self, q: &[f64]) -> f64 {
        let n = self.y.len();
        let active: Vec<usize> = (0..self.dim)
            .filter(|&j| self.bandwidths[j].is_some())
            .collect();
        let p = active.len() + 1;
        let mut gram = vec![0.0f64; p * p];
        let mut rhs = vec![0.0f64; p];
        let mut row = vec![0.0f64; p];
        for i in 0..n {
            let mut log_w = 0.0;
            row[0] = 1.0;
            for (slot, &j) in active.iter().enumerate() {
                let b = self.bandwidths[j].unwrap();
                let t = (self.x[i * self.dim + j] - q[j]) / b;
                log_w -= 0.5 * t * t;
                row[slot + 1] = t;
            }
            let w = log_w.exp();
            for r in 0..p {
                rhs[r] += w * row[r] * self.y[i];
                for c in r..p {
                    gram[r * p + c] += w * row[r] * row[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                gram[r * p + c] = gram[c * p + r];
            }
        }
        // fall back to the local mean when the local design degenerates
        match crate::linalg::solve_sym(gram.clone(), rhs.clone()) {
            Ok(beta) => beta[0],
            Err(_) => {
                if gram[0] > 0.0 {
                    rhs[0] / gram[0]
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fits `E[y | x]` with the configured learner.
///
/// `x` is row-major `n x dim`. Requires `n >= max(10, 2 * basis size)`.
pub fn fit_regression(
    x: &[f64],
    dim: usize,
    y: &[f64],
    cfg: &RegressionConfig,
) -> Result<RegressionModel> {
    let n = y.len();
    match cfg.method {
        RegressionMethod::PenalizedSplineTensor => {
            let mut df = vec![cfg.df_treatment];
            df.extend(std::iter::repeat(cfg.df_covariate).take(dim.saturating_sub(1)));
            if dim == 0 {
                df = vec![1];
            }
            let spline_cfg = SplineFitConfig {
                df,
                ridge: cfg.ridge.clone(),
            };
            let model = PenalizedSpline::fit(x, dim, y, &spline_cfg)?;
            let need = (2 * model.basis_size()).max(10);
            if n < need && dim > 0 {
                return Err(Error::InsufficientData(format!(
                    "{n} rows for a basis of {} columns (need {need})",
                    model.basis_size()
                )));
            }
            Ok(RegressionModel::Spline(model))
        }
        RegressionMethod::LocalLinearProductKernel => {
            let need = (2 * (dim + 1)).max(10);
            if n < need {
                return Err(Error::InsufficientData(format!(
                    "{n} rows for local linear regression in {dim} coordinates (need {need})"
                )));
            }
            Ok(RegressionModel::LocalLinear(LocalLinearModel::fit(
                x,
                dim,
                y,
                cfg.bandwidth_multiplier,
            )?))
        }
    }
}

/// How density ratios (`delta`, relevance curves) are estimated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum DensityMethod {
    /// Gaussian product-kernel estimators.
    Kde { bandwidth_multiplier: f64 },
    /// Empirical frequencies; exact on discrete data.
    Frequency,
}

impl Default for DensityMethod {
    fn default() -> Self {
        DensityMethod::Kde {
            bandwidth_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub regression: RegressionConfig,
    pub density: DensityMethod,
    /// Floor for `p_hat(a | l)` inside `delta`.
    pub density_floor: f64,
    /// Clip threshold for `|kappa|`; default `0.01 sd(Z_pi)`.
    pub kappa_floor: Option<f64>,
    pub delta_cap: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            regression: RegressionConfig::default(),
            density: DensityMethod::default(),
            density_floor: 1e-4,
            kappa_floor: None,
            delta_cap: 20.0,
        }
    }
}

/// The fitted nuisance vector `[mu, rho, kappa, eta, delta]`.
#[derive(Clone)]
pub struct NuisanceVector {
    mu: PointFn,
    rho: CovFn,
    kappa_raw: PointFn,
    eta: PointFn,
    delta_raw: PointFn,
    kappa_floor: f64,
    delta_cap: f64,
    kappa_clips: Arc<AtomicU64>,
    delta_caps: Arc<AtomicU64>,
}

impl std::fmt::Debug for NuisanceVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NuisanceVector")
            .field("kappa_floor", &self.kappa_floor)
            .field("delta_cap", &self.delta_cap)
            .field("kappa_clips", &self.kappa_clips.load(Ordering::Relaxed))
            .field("delta_caps", &self.delta_caps.load(Ordering::Relaxed))
            .finish()
    }
}

impl NuisanceVector {
    pub fn from_parts(
        mu: PointFn,
        rho: CovFn,
        kappa: PointFn,
        eta: PointFn,
        delta: PointFn,
        kappa_floor: f64,
        delta_cap: f64,
    ) -> Self {
        NuisanceVector {
            mu,
            rho,
            kappa_raw: kappa,
            eta,
            delta_raw: delta,
            kappa_floor,
            delta_cap,
            kappa_clips: Arc::new(AtomicU64::new(0)),
            delta_caps: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Exact components with no clipping; for oracle injection.
    pub fn exact(mu: PointFn, rho: CovFn, kappa: PointFn, eta: PointFn, delta: PointFn) -> Self {
        Self::from_parts(mu, rho, kappa, eta, delta, 0.0, f64::INFINITY)
    }

    pub fn mu(&self, a: f64, l: &[f64]) -> f64 {
        (self.mu)(a, l)
    }

    pub fn rho(&self, l: &[f64]) -> f64 {
        (self.rho)(l)
    }

    /// Relevance signal, clipped away from zero with its sign preserved.
    pub fn kappa(&self, a: f64, l: &[f64]) -> f64 {
        let v = (self.kappa_raw)(a, l);
        if v.abs() >= self.kappa_floor {
            v
        } else {
            self.kappa_clips.fetch_add(1, Ordering::Relaxed);
            let sign = if v < 0.0 { -1.0 } else { 1.0 };
            sign * self.kappa_floor
        }
    }

    /// Unclipped relevance signal (diagnostics).
    pub fn kappa_unclipped(&self, a: f64, l: &[f64]) -> f64 {
        (self.kappa_raw)(a, l)
    }

    pub fn eta(&self, a: f64, l: &[f64]) -> f64 {
        (self.eta)(a, l)
    }

    pub fn delta(&self, a: f64, l: &[f64]) -> f64 {
        let v = (self.delta_raw)(a, l);
        if v > self.delta_cap {
            self.delta_caps.fetch_add(1, Ordering::Relaxed);
            self.delta_cap
        } else {
            v.max(1e-12)
        }
    }

    pub fn kappa_floor(&self) -> f64 {
        self.kappa_floor
    }

    pub fn delta_cap(&self) -> f64 {
        self.delta_cap
    }

    /// `(kappa clips, delta caps)` observed so far.
    pub fn clip_counts(&self) -> (u64, u64) {
        (
            self.kappa_clips.load(Ordering::Relaxed),
            self.delta_caps.load(Ordering::Relaxed),
        )
    }

    /// Grid scan of component magnitudes over `a_grid x l_rows`.
    pub fn scan_bounds(&self, a_grid: &[f64], l_rows: &[Vec<f64>]) -> ComponentBounds {
        let mut b = ComponentBounds::default();
        for l in l_rows {
            b.rho = b.rho.max(self.rho(l).abs());
            for &a in a_grid {
                b.mu = b.mu.max(self.mu(a, l).abs());
                b.kappa = b.kappa.max(self.kappa(a, l).abs());
                b.eta = b.eta.max(self.eta(a, l).abs());
                b.delta = b.delta.max(self.delta(a, l).abs());
            }
        }
        b
    }
}

/// Max absolute component values from a grid scan.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ComponentBounds {
    pub mu: f64,
    pub rho: f64,
    pub kappa: f64,
    pub eta: f64,
    pub delta: f64,
}

impl ComponentBounds {
    pub fn all_finite(&self) -> bool {
        self.mu.is_finite()
            && self.rho.is_finite()
            && self.kappa.is_finite()
            && self.eta.is_finite()
            && self.delta.is_finite()
    }
}

/// Fits the conditional density of the treatment given covariate rows.
pub fn fit_conditional_density(
    responses: &[f64],
    covariates: &[f64],
    dim: usize,
    bandwidth_multiplier: f64,
) -> Result<CondKde<f64>> {
    if responses.len() < 50 {
        return Err(Error::InsufficientData(format!(
            "conditional density needs at least 50 rows, got {}",
            responses.len()
        )));
    }
    CondKde::fit(responses, covariates, dim, bandwidth_multiplier)
}

/// Builds the density weighting function `pi(z, l) = p_hat(a0 | z, l)`.
///
/// The bound is set to 1.5 times the max evaluation over the training rows.
pub fn make_density_rwf(
    train: &Dataset,
    a0: f64,
    bandwidth_multiplier: f64,
) -> Result<WeightingFunction> {
    let (lo, hi) = train.treatment_support();
    if !(lo < a0 && a0 < hi) {
        return Err(Error::Misuse(format!(
            "a0 = {a0} must be strictly interior to the treatment support [{lo}, {hi}]"
        )));
    }
    let n = train.len();
    let dim = train.z_dim() + train.l_dim();
    let mut cov = Vec::with_capacity(n * dim);
    for i in 0..n {
        cov.extend_from_slice(train.z_row(i));
        cov.extend_from_slice(train.l_row(i));
    }
    let model = Arc::new(fit_conditional_density(
        train.a(),
        &cov,
        dim,
        bandwidth_multiplier,
    )?);
    let mut max_pi: f64 = 0.0;
    for i in 0..n {
        max_pi = max_pi.max(model.pdf_or_zero(a0, &cov[i * dim..(i + 1) * dim]));
    }
    Ok(WeightingFunction::conditional_density(
        a0,
        model,
        1.5 * max_pi,
    ))
}

/// Carves a seeded holdout slice off `data`, fits the density weighting
/// function there, and returns it with the remaining estimation rows.
///
/// Used when no auxiliary sample is available for the density fit: the
/// weighting function must stay independent of the rows it scores.
pub fn density_rwf_with_holdout(
    data: &Dataset,
    a0: f64,
    train_fraction: f64,
    bandwidth_multiplier: f64,
    seed: u64,
) -> Result<(WeightingFunction, Dataset)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n = data.len();
    if n < 4 {
        return Err(Error::InsufficientData("too few rows to hold out a training slice".into()));
    }
    let cut = ((train_fraction * n as f64) as usize).clamp(50.min(n / 2), n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train = data.subset(&order[..cut])?;
    let mut rest: Vec<usize> = order[cut..].to_vec();
    rest.sort_unstable();
    let estimation = data.subset(&rest)?;
    let pi = make_density_rwf(&train, a0, bandwidth_multiplier)?;
    Ok((pi, estimation))
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}

/// Frequency tables for exact density ratios on discrete data.
fn frequency_delta(train: &Dataset, floor: f64, cap: f64) -> PointFn {
    let n = train.len() as f64;
    let mut a_counts: Vec<(f64, f64)> = Vec::new();
    let mut al_counts: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    let mut l_counts: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..train.len() {
        let a = train.a()[i];
        let l = train.l_row(i);
        match a_counts.iter_mut().find(|(v, _)| (*v - a).abs() < 1e-9) {
            Some((_, c)) => *c += 1.0,
            None => a_counts.push((a, 1.0)),
        }
        match l_counts
            .iter_mut()
            .find(|(v, _)| v.iter().zip(l).all(|(x, y)| (x - y).abs() < 1e-9))
        {
            Some((_, c)) => *c += 1.0,
            None => l_counts.push((l.to_vec(), 1.0)),
        }
        match al_counts.iter_mut().find(|(v, w, _)| {
            (*v - a).abs() < 1e-9 && w.iter().zip(l).all(|(x, y)| (x - y).abs() < 1e-9)
        }) {
            Some((_, _, c)) => *c += 1.0,
            None => al_counts.push((a, l.to_vec(), 1.0)),
        }
    }
    Arc::new(move |a: f64, l: &[f64]| -> f64 {
        let pa = a_counts
            .iter()
            .find(|(v, _)| (*v - a).abs() < 1e-9)
            .map(|(_, c)| c / n)
            .unwrap_or(0.0);
        let pl = l_counts
            .iter()
            .find(|(v, _)| v.iter().zip(l).all(|(x, y)| (x - y).abs() < 1e-9))
            .map(|(_, c)| *c)
            .unwrap_or(0.0);
        let pal = al_counts
            .iter()
            .find(|(v, w, _)| {
                (*v - a).abs() < 1e-9 && w.iter().zip(l).all(|(x, y)| (x - y).abs() < 1e-9)
            })
            .map(|(_, _, c)| *c)
            .unwrap_or(0.0);
        if pl == 0.0 {
            return 1.0;
        }
        let p_a_given_l = (pal / pl).max(floor);
        (pa / p_a_given_l).min(cap)
    })
}

/// Trains the nuisance vector on a subsample.
pub fn train_nuisance(
    train: &Dataset,
    pi: &WeightingFunction,
    cfg: &NuisanceConfig,
) -> Result<NuisanceVector> {
    let zpi = zpi_column(train, pi)?;
    train_nuisance_with_zpi(train, &zpi, cfg)
}

/// As [`train_nuisance`] with the `Z_pi` column already evaluated.
pub fn train_nuisance_with_zpi(
    train: &Dataset,
    zpi: &[f64],
    cfg: &NuisanceConfig,
) -> Result<NuisanceVector> {
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if zpi.len() != n {
        return Err(Error::Misuse("Z_pi column length mismatch".into()));
    }
    let l_dim = train.l_dim();
    let mut x_al = Vec::with_capacity(n * (1 + l_dim));
    let mut x_l = Vec::with_capacity(n * l_dim);
    for i in 0..n {
        x_al.push(train.a()[i]);
        x_al.extend_from_slice(train.l_row(i));
        x_l.extend_from_slice(train.l_row(i));
    }
    let yz: Vec<f64> = train.y().iter().zip(zpi).map(|(y, z)| y * z).collect();

    let component = |name: &str, r: Result<RegressionModel>| -> Result<Arc<RegressionModel>> {
        r.map(Arc::new).map_err(|e| Error::NuisanceTraining {
            component: name.into(),
            message: e.to_string(),
        })
    };
    let eta_fit = component(
        "eta",
        fit_regression(&x_al, 1 + l_dim, train.y(), &cfg.regression),
    )?;
    let rho_fit = component("rho", fit_regression(&x_l, l_dim, zpi, &cfg.regression))?;
    let kreg_fit = component(
        "kappa",
        fit_regression(&x_al, 1 + l_dim, zpi, &cfg.regression),
    )?;
    let munum_fit = component("mu", fit_regression(&x_al, 1 + l_dim, &yz, &cfg.regression))?;

    let kappa_floor = cfg.kappa_floor.unwrap_or_else(|| 0.01 * sd(zpi)).max(1e-12);
    let delta_cap = cfg.delta_cap;

    let delta_raw: PointFn = if l_dim == 0 {
        Arc::new(|_a, _l| 1.0)
    } else {
        match &cfg.density {
            DensityMethod::Kde {
                bandwidth_multiplier,
            } => {
                let pa = Kde1d::fit(train.a(), *bandwidth_multiplier).map_err(|e| {
                    Error::NuisanceTraining {
                        component: "delta".into(),
                        message: e.to_string(),
                    }
                })?;
                let pal = CondKde::fit(train.a(), &x_l, l_dim, *bandwidth_multiplier).map_err(
                    |e| Error::NuisanceTraining {
                        component: "delta".into(),
                        message: e.to_string(),
                    },
                )?;
                let floor = cfg.density_floor;
                Arc::new(move |a: f64, l: &[f64]| {
                    let num = pa.pdf(a);
                    let den = pal.pdf_or_zero(a, l).max(floor);
                    num / den
                })
            }
            DensityMethod::Frequency => frequency_delta(train, cfg.density_floor, delta_cap),
        }
    };

    let eta: PointFn = {
        let m = Arc::clone(&eta_fit);
        Arc::new(move |a, l| {
            let mut q = Vec::with_capacity(1 + l.len());
            q.push(a);
            q.extend_from_slice(l);
            m.predict(&q)
        })
    };
    let rho: CovFn = {
        let m = Arc::clone(&rho_fit);
        Arc::new(move |l: &[f64]| m.predict(l))
    };
    let kappa: PointFn = {
        let kreg = Arc::clone(&kreg_fit);
        let rho_m = Arc::clone(&rho_fit);
        Arc::new(move |a, l| {
            let mut q = Vec::with_capacity(1 + l.len());
            q.push(a);
            q.extend_from_slice(l);
            kreg.predict(&q) - rho_m.predict(l)
        })
    };

    let kappa_clips = Arc::new(AtomicU64::new(0));

    // mu comes from the ratio definition, with the clipped kappa in the
    // denominator
    let mu: PointFn = {
        let munum = Arc::clone(&munum_fit);
        let eta_m = Arc::clone(&eta_fit);
        let rho_m = Arc::clone(&rho_fit);
        let kappa_inner = kappa.clone();
        let clips = Arc::clone(&kappa_clips);
        let floor = kappa_floor;
        Arc::new(move |a, l| {
            let mut q = Vec::with_capacity(1 + l.len());
            q.push(a);
            q.extend_from_slice(l);
            let num = munum.predict(&q) - eta_m.predict(&q) * rho_m.predict(l);
            let k = kappa_inner(a, l);
            let k = if k.abs() >= floor {
                k
            } else {
                clips.fetch_add(1, Ordering::Relaxed);
                if k < 0.0 {
                    -floor
                } else {
                    floor
                }
            };
            num / k
        })
    };

    Ok(NuisanceVector {
        mu,
        rho,
        kappa_raw: kappa,
        eta,
        delta_raw,
        kappa_floor,
        delta_cap,
        kappa_clips,
        delta_caps: Arc::new(AtomicU64::new(0)),
    })
}

/// Degenerate nuisance set for datasets with no covariates:
/// `[rho, mu(a), kappa(a), lambda(a)]`.
#[derive(Clone)]
pub struct DegenerateNuisance {
    pub rho: f64,
    mu: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    kappa: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lambda: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    kappa_floor: f64,
}

impl DegenerateNuisance {
    pub fn new(
        rho: f64,
        mu: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        kappa: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lambda: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        kappa_floor: f64,
    ) -> Self {
        DegenerateNuisance {
            rho,
            mu,
            kappa,
            lambda,
            kappa_floor,
        }
    }

    pub fn mu(&self, a: f64) -> f64 {
        (self.mu)(a)
    }

    pub fn kappa(&self, a: f64) -> f64 {
        let v = (self.kappa)(a);
        if v.abs() >= self.kappa_floor {
            v
        } else if v < 0.0 {
            -self.kappa_floor
        } else {
            self.kappa_floor
        }
    }

    pub fn lambda(&self, a: f64) -> f64 {
        (self.lambda)(a)
    }
}

/// Trains the degenerate nuisance set on a covariate-free dataset.
pub fn train_degenerate_nuisance(
    train: &Dataset,
    pi: &WeightingFunction,
    cfg: &NuisanceConfig,
) -> Result<DegenerateNuisance> {
    if train.l_dim() != 0 {
        return Err(Error::Misuse(
            "degenerate nuisances require a dataset with no covariates".into(),
        ));
    }
    let zpi = zpi_column(train, pi)?;
    let n = train.len();
    let rho = zpi.iter().sum::<f64>() / n as f64;
    let yz: Vec<f64> = train.y().iter().zip(&zpi).map(|(y, z)| y * z).collect();
    let component = |name: &str, r: Result<RegressionModel>| -> Result<Arc<RegressionModel>> {
        r.map(Arc::new).map_err(|e| Error::NuisanceTraining {
            component: name.into(),
            message: e.to_string(),
        })
    };
    let lambda_fit = component(
        "lambda",
        fit_regression(train.a(), 1, train.y(), &cfg.regression),
    )?;
    let kreg_fit = component("kappa", fit_regression(train.a(), 1, &zpi, &cfg.regression))?;
    let munum_fit = component("mu", fit_regression(train.a(), 1, &yz, &cfg.regression))?;
    let kappa_floor = cfg.kappa_floor.unwrap_or_else(|| 0.01 * sd(&zpi)).max(1e-12);

    let kappa = {
        let kreg = Arc::clone(&kreg_fit);
        Arc::new(move |a: f64| kreg.predict(&[a]) - rho)
    };
    let lambda = {
        let m = Arc::clone(&lambda_fit);
        Arc::new(move |a: f64| m.predict(&[a]))
    };
    let mu = {
        let munum = Arc::clone(&munum_fit);
        let lam = Arc::clone(&lambda_fit);
        let kreg = Arc::clone(&kreg_fit);
        Arc::new(move |a: f64| {
            let k = kreg.predict(&[a]) - rho;
            let k = if k.abs() >= kappa_floor {
                k
            } else if k < 0.0 {
                -kappa_floor
            } else {
                kappa_floor
            };
            (munum.predict(&[a]) - rho * lam.predict(&[a])) / k
        })
    };
    Ok(DegenerateNuisance::new(rho, mu, kappa, lambda, kappa_floor))
}
