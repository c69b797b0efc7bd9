//! Dose-response estimation from cross-fitted scores: the kernel-smoothed
//! curve with pointwise confidence intervals, a natural-spline fit, and a
//! nonparametric bootstrap.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{crossfit_scores, CrossfitConfig};
use crate::data::{derive_seed, Dataset, TargetInterval};
use crate::density::Kde1d;
use crate::error::{Error, Result};
use crate::kernel_smooth::{
    default_h_grid, select_bandwidth, BandwidthObjective, Kernel, SortedPoints,
};
use crate::linalg;
use crate::nuisance::WeightingFunction;
use crate::scores::{EstimatorTag, ScoreVector};
use crate::spline::SplineBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DrfMethod {
    #[default]
    Llkr,
    ErmSpline,
}

/// Bandwidth choice: fixed, or selected by the localized criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrfConfig {
    pub method: DrfMethod,
    pub grid_size: usize,
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
    pub objective: BandwidthObjective,
    /// Degrees of freedom of the natural-spline fit.
    pub erm_df: usize,
    /// Grid count for the default bandwidth search.
    pub h_grid_size: usize,
}

impl Default for DrfConfig {
    fn default() -> Self {
        DrfConfig {
            method: DrfMethod::Llkr,
            grid_size: 51,
            kernel: Kernel::Epanechnikov,
            bandwidth: Bandwidth::Auto,
            objective: BandwidthObjective::Loocv,
            erm_df: 3,
            h_grid_size: 20,
        }
    }
}

/// Estimated curve on a treatment grid. Failed grid points stay `None`;
/// they are never interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrfEstimate {
    pub grid: Vec<f64>,
    pub theta: Vec<Option<f64>>,
    pub se: Vec<Option<f64>>,
    pub ci_lo: Vec<Option<f64>>,
    pub ci_hi: Vec<Option<f64>>,
    /// Bandwidth used (kernel method only).
    pub h: Option<f64>,
    pub kernel: Option<Kernel>,
    pub method: DrfMethod,
    /// Grid points whose variance estimate was clipped at zero.
    pub degenerate_variance: usize,
}

impl DrfEstimate {
    pub fn theta_at(&self, a: f64) -> Option<f64> {
        let idx = self
            .grid
            .iter()
            .position(|&g| (g - a).abs() < 1e-9)?;
        self.theta[idx]
    }

    /// Plot-ready CSV: `a,theta,se,lo,hi` with empty cells for missing
    /// points.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "a,theta,se,lo,hi")?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.grid[i],
                cell(self.theta[i]),
                cell(self.se[i]),
                cell(self.ci_lo[i]),
                cell(self.ci_hi[i]),
            )?;
        }
        Ok(())
    }
}

fn paired(scores: &ScoreVector, a: &[f64]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != a.len() {
        return Err(Error::Misuse("scores and treatments must align".into()));
    }
    Ok(a.iter().copied().zip(scores.values.iter().copied()).collect())
}

/// Resolves the bandwidth for a score set.
pub fn resolve_bandwidth(
    points: &[(f64, f64)],
    interval: &TargetInterval,
    cfg: &DrfConfig,
) -> Result<f64> {
    match cfg.bandwidth {
        Bandwidth::Fixed(h) => {
            if h > 0.0 {
                Ok(h)
            } else {
                Err(Error::Misuse("bandwidth must be positive".into()))
            }
        }
        Bandwidth::Auto => {
            let a_values: Vec<f64> = points.iter().map(|p| p.0).collect();
            let grid = default_h_grid(&a_values, cfg.h_grid_size);
            Ok(select_bandwidth(points, interval, &grid, cfg.kernel, cfg.objective)?.h)
        }
    }
}

/// Kernel-smoothed curve of the scores on the treatment grid.
pub fn estimate_drf_llkr(
    scores: &ScoreVector,
    a: &[f64],
    interval: &TargetInterval,
    grid_size: usize,
    bandwidth: Bandwidth,
    kernel: Kernel,
) -> Result<DrfEstimate> {
    let cfg = DrfConfig {
        bandwidth,
        kernel,
        grid_size,
        ..Default::default()
    };
    let points = paired(scores, a)?;
    if grid_size < 2 {
        return Err(Error::Misuse("grid needs at least 2 points".into()));
    }
    let h = resolve_bandwidth(&points, interval, &cfg)?;
    let sorted = SortedPoints::new(&points);
    let grid = interval.grid(grid_size);
    let theta: Vec<Option<f64>> = grid
        .iter()
        .map(|&g| match sorted.intercept_at(g, h, kernel) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("curve point a = {g} failed: {e}");
                None
            }
        })
        .collect();
    let m = grid.len();
    Ok(DrfEstimate {
        grid,
        theta,
        se: vec![None; m],
        ci_lo: vec![None; m],
        ci_hi: vec![None; m],
        h: Some(h),
        kernel: Some(kernel),
        method: DrfMethod::Llkr,
        degenerate_variance: 0,
    })
}

/// Pointwise variance and confidence interval at `a`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub theta: f64,
    /// Standard error of the curve estimate (already divided by
    /// `sqrt(n h)`).
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Conditional variance of the score given the treatment.
    pub variance: f64,
    /// Set when the variance fit came out nonpositive and was clipped.
    pub degenerate: bool,
}

/// Estimates the curve variance at `a` by smoothing squared centered
/// scores, and forms the normal confidence interval.
pub fn estimate_variance(
    a: f64,
    points: &[(f64, f64)],
    p_a_hat: &Kde1d<f64>,
    kernel: Kernel,
    h: f64,
    density_floor: f64,
) -> Result<VarianceEstimate> {
    let sorted = SortedPoints::new(points);
    estimate_variance_sorted(a, &sorted, p_a_hat, kernel, h, density_floor)
}

fn estimate_variance_sorted(
    a: f64,
    sorted: &SortedPoints,
    p_a_hat: &Kde1d<f64>,
    kernel: Kernel,
    h: f64,
    density_floor: f64,
) -> Result<VarianceEstimate> {
    let p_a = p_a_hat.pdf(a);
    if p_a <= density_floor {
        return Err(Error::LowDensity { denominator: p_a });
    }
    let theta = sorted.intercept_at(a, h, kernel)?;
    // leave-one-out residuals of the curve fit, smoothed with a wider
    // pilot bandwidth: the raw squared residuals are absorbed by the fit,
    // and the variance functional tolerates heavier smoothing
    let pilot = 2.0 * h;
    let (lo, hi) = sorted.window_range(a, pilot);
    let mut sq = Vec::with_capacity(hi - lo);
    for i in lo..hi {
        let ai = sorted.a_values()[i];
        let (fit, lev) = sorted.fit_with_leverage(ai, h, kernel)?;
        let mut r = sorted.s_values()[i] - fit;
        if lev < 1.0 - 1e-8 {
            r /= 1.0 - lev;
        }
        sq.push((ai, r * r));
    }
    let raw = crate::kernel_smooth::llkr_intercept(&sq, a, pilot, kernel)?;
    let degenerate = raw <= 0.0;
    let variance = raw.max(0.0);
    let (int_k2, _) = kernel.constants::<f64>();
    let n = sorted.len() as f64;
    let se = (int_k2 / p_a * variance).sqrt() / (n * h).sqrt();
    Ok(VarianceEstimate {
        theta,
        se,
        ci_lo: theta - 1.96 * se,
        ci_hi: theta + 1.96 * se,
        variance,
        degenerate,
    })
}

/// Kernel curve with pointwise confidence intervals at every grid point.
pub fn estimate_drf_llkr_with_ci(
    scores: &ScoreVector,
    a: &[f64],
    interval: &TargetInterval,
    cfg: &DrfConfig,
    density_floor: f64,
) -> Result<DrfEstimate> {
    let points = paired(scores, a)?;
    if cfg.grid_size < 2 {
        return Err(Error::Misuse("grid needs at least 2 points".into()));
    }
    let h = resolve_bandwidth(&points, interval, cfg)?;
    let sorted = SortedPoints::new(&points);
    let p_a = Kde1d::fit(a, 1.0)?;
    let grid = interval.grid(cfg.grid_size);
    let mut est = DrfEstimate {
        grid: grid.clone(),
        theta: vec![None; grid.len()],
        se: vec![None; grid.len()],
        ci_lo: vec![None; grid.len()],
        ci_hi: vec![None; grid.len()],
        h: Some(h),
        kernel: Some(cfg.kernel),
        method: DrfMethod::Llkr,
        degenerate_variance: 0,
    };
    for (i, &g) in grid.iter().enumerate() {
        match estimate_variance_sorted(g, &sorted, &p_a, cfg.kernel, h, density_floor) {
            Ok(v) => {
                est.theta[i] = Some(v.theta);
                est.se[i] = Some(v.se);
                est.ci_lo[i] = Some(v.ci_lo);
                est.ci_hi[i] = Some(v.ci_hi);
                if v.degenerate {
                    est.degenerate_variance += 1;
                }
            }
            Err(e) => log::warn!("variance at a = {g} failed: {e}"),
        }
    }
    Ok(est)
}

/// Smoothing-bias plug-in `h^2/2 theta''(a) int K s^2` with the second
/// derivative from central differences on the estimate grid.
pub fn plugin_bias(estimate: &DrfEstimate, a: f64, kernel: Kernel, h: f64) -> Option<f64> {
    let grid = &estimate.grid;
    if grid.len() < 3 {
        return None;
    }
    let idx = grid.iter().position(|&g| (g - a).abs() < 1e-9)?;
    if idx == 0 || idx + 1 >= grid.len() {
        return None;
    }
    let step = grid[1] - grid[0];
    let (lo, mid, hi) = (
        estimate.theta[idx - 1]?,
        estimate.theta[idx]?,
        estimate.theta[idx + 1]?,
    );
    let second = (hi - 2.0 * mid + lo) / (step * step);
    let (_, int_ks2) = kernel.constants::<f64>();
    Some(0.5 * h * h * second * int_ks2)
}

/// Least-squares projection of in-interval scores onto a natural-spline
/// basis in the treatment.
pub fn estimate_drf_erm(
    scores: &ScoreVector,
    a: &[f64],
    interval: &TargetInterval,
    df: usize,
    grid_size: usize,
) -> Result<DrfEstimate> {
    if df < 1 {
        return Err(Error::Misuse("spline degrees of freedom must be at least 1".into()));
    }
    let points = paired(scores, a)?;
    let inside: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(ai, _)| interval.contains(*ai))
        .collect();
    if inside.len() < df + 2 {
        return Err(Error::InsufficientData(format!(
            "{} in-interval rows cannot support df = {df}",
            inside.len()
        )));
    }
    let a_in: Vec<f64> = inside.iter().map(|p| p.0).collect();
    let basis = SplineBasis::from_quantiles(&a_in, df);
    let p = basis.size();
    let mut gram = vec![0.0f64; p * p];
    let mut rhs = vec![0.0f64; p];
    let mut row = vec![0.0f64; p];
    for &(ai, si) in &inside {
        basis.eval_into(ai, &mut row);
        for r in 0..p {
            rhs[r] += row[r] * si;
            for c in r..p {
                gram[r * p + c] += row[r] * row[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            gram[r * p + c] = gram[c * p + r];
        }
    }
    linalg::cholesky_in_place(&mut gram, p)
        .map_err(|e| Error::Conditioning(format!("spline basis rank-deficient: {e}")))?;
    linalg::cholesky_solve(&gram, p, &mut rhs);

    let grid = interval.grid(grid_size.max(2));
    let theta: Vec<Option<f64>> = grid
        .iter()
        .map(|&g| {
            basis.eval_into(g, &mut row);
            Some(row.iter().zip(&rhs).map(|(b, c)| b * c).sum())
        })
        .collect();
    let m = grid.len();
    Ok(DrfEstimate {
        grid,
        theta,
        se: vec![None; m],
        ci_lo: vec![None; m],
        ci_hi: vec![None; m],
        h: None,
        kernel: None,
        method: DrfMethod::ErmSpline,
        degenerate_variance: 0,
    })
}

/// Dispatches on the configured method.
pub fn estimate_curve(
    scores: &ScoreVector,
    a: &[f64],
    interval: &TargetInterval,
    cfg: &DrfConfig,
) -> Result<DrfEstimate> {
    match cfg.method {
        DrfMethod::Llkr => {
            estimate_drf_llkr(scores, a, interval, cfg.grid_size, cfg.bandwidth, cfg.kernel)
        }
        DrfMethod::ErmSpline => estimate_drf_erm(scores, a, interval, cfg.erm_df, cfg.grid_size),
    }
}

/// Bootstrap summary per grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub grid: Vec<f64>,
    pub sd: Vec<Option<f64>>,
    pub lo: Vec<Option<f64>>,
    pub hi: Vec<Option<f64>>,
    pub replicates: usize,
    pub failures: usize,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = p * (sorted.len() as f64 - 1.0);
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Nonparametric pairs bootstrap of the full pipeline: resample rows with
/// replacement, rerun cross-fitting and curve estimation per replicate.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_drf(
    data: &Dataset,
    pi: &WeightingFunction,
    interval: &TargetInterval,
    cf_cfg: &CrossfitConfig,
    drf_cfg: &DrfConfig,
    tag: EstimatorTag,
    replications: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if replications < 2 {
        return Err(Error::Misuse("bootstrap needs at least 2 replications".into()));
    }
    let n = data.len();
    let grid = interval.grid(drf_cfg.grid_size.max(2));

    let curves: Vec<Option<Vec<Option<f64>>>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            use rand::Rng;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let run = || -> Result<Vec<Option<f64>>> {
                let resampled = data.subset(&indices)?;
                let mut cfg = cf_cfg.clone();
                cfg.seed = derive_seed(seed, r as u64 + 1);
                cfg.tags = vec![tag];
                let out = crossfit_scores(&resampled, pi, interval, &cfg)?;
                let sv = out.by_tag(tag).expect("tag requested");
                let est = estimate_curve(sv, resampled.a(), interval, drf_cfg)?;
                Ok(est.theta)
            };
            match run() {
                Ok(theta) => Some(theta),
                Err(e) => {
                    log::warn!("bootstrap replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let failures = curves.iter().filter(|c| c.is_none()).count();
    if failures * 5 > replications {
        return Err(Error::Bootstrap {
            failed: failures,
            total: replications,
        });
    }

    let m = grid.len();
    let mut sd = vec![None; m];
    let mut lo = vec![None; m];
    let mut hi = vec![None; m];
    for g in 0..m {
        let mut vals: Vec<f64> = curves
            .iter()
            .flatten()
            .filter_map(|c| c[g])
            .collect();
        if vals.len() >= 2 {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (vals.len() as f64 - 1.0);
            sd[g] = Some(var.sqrt());
            lo[g] = Some(percentile(&vals, 0.025));
            hi[g] = Some(percentile(&vals, 0.975));
        }
    }
    Ok(BootstrapResult {
        grid,
        sd,
        lo,
        hi,
        replicates: replications,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::EstimatorTag;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn score_vector(values: Vec<f64>) -> ScoreVector {
        let n = values.len();
        ScoreVector::new(EstimatorTag::AipwIv, values, vec![0; n], "test".into()).unwrap()
    }

    fn uniform_a(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn constant_scores_give_flat_curve() {
        let a = uniform_a(200, 1);
        let sv = score_vector(vec![2.5; 200]);
        let interval = TargetInterval::new(0.2, 0.8).unwrap();
        let est = estimate_drf_llkr(&sv, &a, &interval, 11, Bandwidth::Fixed(0.3), Kernel::Epanechnikov)
            .unwrap();
        for t in est.theta.iter().flatten() {
            assert!((t - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_scores_with_full_window() {
        let a = uniform_a(200, 2);
        let sv = score_vector(a.iter().map(|v| 3.0 * v - 1.0).collect());
        let interval = TargetInterval::new(0.2, 0.8).unwrap();
        // bandwidth covering all data: exact affine recovery
        let est =
            estimate_drf_llkr(&sv, &a, &interval, 7, Bandwidth::Fixed(1.0), Kernel::Epanechnikov)
                .unwrap();
        for (g, t) in est.grid.iter().zip(est.theta.iter()) {
            assert!((t.unwrap() - (3.0 * g - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_scores_zero_width_ci() {
        let a = uniform_a(300, 3);
        let sv = score_vector(vec![1.0; 300]);
        let interval = TargetInterval::new(0.3, 0.7).unwrap();
        let cfg = DrfConfig {
            bandwidth: Bandwidth::Fixed(0.25),
            grid_size: 5,
            ..Default::default()
        };
        let est = estimate_drf_llkr_with_ci(&sv, &a, &interval, &cfg, 0.0).unwrap();
        for i in 0..est.grid.len() {
            assert!(est.se[i].unwrap() < 1e-12);
            assert!((est.ci_lo[i].unwrap() - est.ci_hi[i].unwrap()).abs() < 1e-10);
        }
        assert_eq!(est.degenerate_variance, est.grid.len());
    }

    #[test]
    fn plugin_bias_quadratic_scores() {
        // theta(a) = a^2 has second derivative 2; with h = 0.3 and the
        // parabolic kernel the plug-in equals 0.5 * 0.09 * 2 * 0.2 = 0.018
        let n = 4000;
        let a = uniform_a(n, 4);
        let sv = score_vector(a.iter().map(|v| v * v).collect());
        let interval = TargetInterval::new(0.2, 0.8).unwrap();
        let est = estimate_drf_llkr(
            &sv,
            &a,
            &interval,
            61,
            Bandwidth::Fixed(0.3),
            Kernel::Epanechnikov,
        )
        .unwrap();
        let b = plugin_bias(&est, 0.5, Kernel::Epanechnikov, 0.3).unwrap();
        assert!((b - 0.018).abs() < 0.004, "plug-in bias {b}");
        // affine curve: second difference vanishes
        let sv = score_vector(a.iter().map(|v| 2.0 * v).collect());
        let est = estimate_drf_llkr(
            &sv,
            &a,
            &interval,
            61,
            Bandwidth::Fixed(0.3),
            Kernel::Epanechnikov,
        )
        .unwrap();
        let b = plugin_bias(&est, 0.5, Kernel::Epanechnikov, 0.3).unwrap();
        assert!(b.abs() < 1e-6, "affine plug-in bias {b}");
    }

    #[test]
    fn plugin_bias_shrinks_quadratically_in_h() {
        let n = 4000;
        let a = uniform_a(n, 5);
        let sv = score_vector(a.iter().map(|v| v * v).collect());
        let interval = TargetInterval::new(0.2, 0.8).unwrap();
        let est = estimate_drf_llkr(
            &sv,
            &a,
            &interval,
            61,
            Bandwidth::Fixed(0.3),
            Kernel::Epanechnikov,
        )
        .unwrap();
        let b1 = plugin_bias(&est, 0.5, Kernel::Epanechnikov, 0.2).unwrap();
        let b2 = plugin_bias(&est, 0.5, Kernel::Epanechnikov, 0.1).unwrap();
        assert!((b1 / b2 - 4.0).abs() < 0.2, "ratio {}", b1 / b2);
    }

    #[test]
    fn erm_affine_matches_closed_form() {
        let a = uniform_a(150, 6);
        let sv = score_vector(a.iter().map(|v| 2.0 * v + 1.0).collect());
        let interval = TargetInterval::new(0.1, 0.9).unwrap();
        let est = estimate_drf_erm(&sv, &a, &interval, 1, 21).unwrap();
        // plain simple regression on in-window rows reproduces the line
        for (g, t) in est.grid.iter().zip(est.theta.iter()) {
            assert!((t.unwrap() - (2.0 * g + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn erm_projection_fixed_point() {
        // scores already in the span of the df = 3 basis are recovered
        let a = uniform_a(400, 7);
        let interval = TargetInterval::new(0.1, 0.9).unwrap();
        let a_in: Vec<f64> = a.iter().copied().filter(|v| interval.contains(*v)).collect();
        let basis = SplineBasis::from_quantiles(&a_in, 3);
        let coef = [0.4, -0.3, 0.8, 0.2];
        let f = |x: f64| -> f64 {
            basis
                .eval(x)
                .iter()
                .zip(&coef)
                .map(|(b, c)| b * c)
                .sum()
        };
        let sv = score_vector(a.iter().map(|&v| f(v)).collect());
        let est = estimate_drf_erm(&sv, &a, &interval, 3, 31).unwrap();
        for (g, t) in est.grid.iter().zip(est.theta.iter()) {
            assert!((t.unwrap() - f(*g)).abs() < 1e-8);
        }
    }

    #[test]
    fn missing_points_are_not_interpolated() {
        // data only on [0.4, 0.6]: outer grid points must stay missing
        let a: Vec<f64> = (0..100).map(|i| 0.4 + 0.2 * i as f64 / 99.0).collect();
        let sv = score_vector(vec![1.0; 100]);
        let interval = TargetInterval::new(0.1, 0.9).unwrap();
        let est = estimate_drf_llkr(
            &sv,
            &a,
            &interval,
            9,
            Bandwidth::Fixed(0.05),
            Kernel::Epanechnikov,
        )
        .unwrap();
        assert!(est.theta[0].is_none());
        assert!(est.theta[8].is_none());
        assert!(est.theta[4].is_some());
    }

    #[test]
    fn csv_round_trip_shape() {
        let est = DrfEstimate {
            grid: vec![0.1, 0.2],
            theta: vec![Some(1.0), None],
            se: vec![Some(0.5), None],
            ci_lo: vec![Some(0.02), None],
            ci_hi: vec![Some(1.98), None],
            h: Some(0.3),
            kernel: Some(Kernel::Epanechnikov),
            method: DrfMethod::Llkr,
            degenerate_variance: 0,
        };
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "a,theta,se,lo,hi\n0.1,1,0.5,0.02,1.98\n0.2,,,,\n");
    }
}
