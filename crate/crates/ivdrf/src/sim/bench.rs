//! Replicated simulation benchmark: draw data, cross-fit, smooth, and
//! aggregate bias and root-mean-square error pointwise and integrated over
//! the target interval.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{simulate_dgp, theta_of, DgpSpec, DgpVariant};
use crate::crossfit::{crossfit_scores, CrossfitConfig};
use crate::data::{derive_seed, TargetInterval};
use crate::density::Kde1d;
use crate::drf::{estimate_curve, DrfConfig};
use crate::error::{Error, Result};
use crate::nuisance::{make_density_rwf, NuisanceConfig};
use crate::scores::EstimatorTag;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub replications: usize,
    pub folds: usize,
    pub interval: TargetInterval,
    /// Anchor of the density weighting function; defaults to the interval
    /// midpoint.
    pub a0: Option<f64>,
    pub tags: Vec<EstimatorTag>,
    pub variant: DgpVariant,
    pub seed: u64,
    /// Auxiliary sample size for fitting the weighting-function density.
    pub pi_train_n: usize,
    /// Cap on empirical-measure rows inside each fold.
    pub emp_cap: Option<usize>,
    pub grid_size: usize,
    /// Treatment values reported pointwise; defaults to midpoint and
    /// midpoint +- 0.1.
    pub report_points: Option<Vec<f64>>,
    pub nuisance: NuisanceConfig,
    pub drf: DrfConfig,
    pub rwf_bandwidth_multiplier: f64,
}

impl BenchmarkConfig {
    pub fn new(n: usize, replications: usize, interval: TargetInterval, seed: u64) -> Self {
        BenchmarkConfig {
            n,
            replications,
            folds: 5,
            interval,
            a0: None,
            tags: vec![
                EstimatorTag::AipwIv,
                EstimatorTag::IpwIv,
                EstimatorTag::OrIv,
                EstimatorTag::AipwNuc,
                EstimatorTag::IpwNuc,
                EstimatorTag::OrNuc,
            ],
            variant: DgpVariant::PaperMain,
            seed,
            pi_train_n: 10_000,
            emp_cap: Some(500),
            grid_size: 51,
            report_points: None,
            nuisance: NuisanceConfig::default(),
            drf: DrfConfig::default(),
            rwf_bandwidth_multiplier: 1.0,
        }
    }

    fn resolved_report_points(&self) -> Vec<f64> {
        self.report_points.clone().unwrap_or_else(|| {
            let mid = self.interval.midpoint();
            vec![mid - 0.1, mid, mid + 0.1]
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub tag: EstimatorTag,
    /// `(a, cell)` at each report point.
    pub points: Vec<(f64, BenchmarkCell)>,
    /// Density-weighted integrals over the interval.
    pub integrated: BenchmarkCell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n: usize,
    pub replications: usize,
    pub folds: usize,
    pub interval: TargetInterval,
    pub seed: u64,
    pub failures: usize,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn row(&self, tag: EstimatorTag) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.tag == tag)
    }

    /// Table layout: one row per framework and estimator, bias columns then
    /// rmse columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let points = self
            .rows
            .first()
            .map(|r| r.points.iter().map(|(a, _)| *a).collect::<Vec<_>>())
            .unwrap_or_default();
        let mut header = vec!["framework".to_string(), "estimator".to_string()];
        for p in &points {
            header.push(format!("bias@{p}"));
        }
        header.push("bias_interval".into());
        for p in &points {
            header.push(format!("rmse@{p}"));
        }
        header.push("rmse_interval".into());
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let (framework, estimator) = framework_of(row.tag);
            let mut cells = vec![framework.to_string(), estimator.to_string()];
            for (_, c) in &row.points {
                cells.push(format!("{:.4}", c.bias));
            }
            cells.push(format!("{:.4}", row.integrated.bias));
            for (_, c) in &row.points {
                cells.push(format!("{:.4}", c.rmse));
            }
            cells.push(format!("{:.4}", row.integrated.rmse));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn framework_of(tag: EstimatorTag) -> (&'static str, &'static str) {
    match tag {
        EstimatorTag::AipwIv => ("iv", "aipw"),
        EstimatorTag::IpwIv => ("iv", "ipw"),
        EstimatorTag::OrIv => ("iv", "or"),
        EstimatorTag::AipwNuc => ("nuc", "aipw"),
        EstimatorTag::IpwNuc => ("nuc", "ipw"),
        EstimatorTag::OrNuc => ("nuc", "or"),
        EstimatorTag::DegenerateIv => ("iv", "degenerate"),
        EstimatorTag::MulticatIv => ("iv", "multicat"),
    }
}

struct Replicate {
    curves: Vec<Vec<f64>>, // [tag][grid]
    pooled_a: Vec<f64>,
}

fn run_replicate(cfg: &BenchmarkConfig, grid: &[f64], r: u64) -> Result<Replicate> {
    let data = simulate_dgp(&DgpSpec {
        n: cfg.n,
        seed: derive_seed(cfg.seed, 3 * r),
        variant: cfg.variant.clone(),
    })?
    .dataset;
    let pi_train = simulate_dgp(&DgpSpec {
        n: cfg.pi_train_n,
        seed: derive_seed(cfg.seed, 3 * r + 1),
        variant: cfg.variant.clone(),
    })?
    .dataset;
    let a0 = cfg.a0.unwrap_or_else(|| cfg.interval.midpoint());
    let pi = make_density_rwf(&pi_train, a0, cfg.rwf_bandwidth_multiplier)?;

    let mut cf = CrossfitConfig::new(derive_seed(cfg.seed, 3 * r + 2));
    cf.folds = cfg.folds;
    cf.tags = cfg.tags.clone();
    cf.nuisance = cfg.nuisance.clone();
    cf.emp_cap = cfg.emp_cap;
    let out = crossfit_scores(&data, &pi, &cfg.interval, &cf)?;

    let mut drf_cfg = cfg.drf.clone();
    drf_cfg.grid_size = cfg.grid_size;
    let mut curves = Vec::with_capacity(cfg.tags.len());
    for tag in &cfg.tags {
        let sv = out.by_tag(*tag).expect("tag computed");
        let est = estimate_curve(sv, data.a(), &cfg.interval, &drf_cfg)?;
        let curve: Vec<f64> = est
            .theta
            .iter()
            .map(|t| t.ok_or_else(|| Error::Benchmark("curve point missing".into())))
            .collect::<Result<_>>()?;
        debug_assert_eq!(curve.len(), grid.len());
        curves.push(curve);
    }
    // thinned treatment draws for the pooled density weight
    let stride = (cfg.n / 1000).max(1);
    let pooled_a: Vec<f64> = data.a().iter().step_by(stride).copied().collect();
    Ok(Replicate { curves, pooled_a })
}

/// Runs the full replicated benchmark. Deterministic given the seed, with
/// per-replicate derived seeds so worker count never matters.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.replications < 2 {
        return Err(Error::Benchmark("need at least 2 replications".into()));
    }
    let grid = cfg.interval.grid(cfg.grid_size.max(2));
    let results: Vec<Option<Replicate>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| match run_replicate(cfg, &grid, r) {
            Ok(rep) => Some(rep),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                None
            }
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures * 10 > cfg.replications {
        return Err(Error::Benchmark(format!(
            "{failures} of {} replicates failed",
            cfg.replications
        )));
    }
    let successes: Vec<&Replicate> = results.iter().flatten().collect();
    let m = successes.len() as f64;

    // pooled density weight over the interval, normalized on the grid
    let pooled: Vec<f64> = successes
        .iter()
        .flat_map(|r| r.pooled_a.iter().copied())
        .collect();
    let kde = Kde1d::fit(&pooled, 1.0)?;
    let weights: Vec<f64> = grid.iter().map(|&g| kde.pdf(g)).collect();

    let trapz = |values: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 1..grid.len() {
            acc += 0.5 * (values[i - 1] + values[i]) * (grid[i] - grid[i - 1]);
        }
        acc
    };
    let total_weight = trapz(&weights);

    let report_points = cfg.resolved_report_points();
    let mut rows = Vec::with_capacity(cfg.tags.len());
    for (t, &tag) in cfg.tags.iter().enumerate() {
        let mut bias_curve = Vec::with_capacity(grid.len());
        let mut rmse_curve = Vec::with_capacity(grid.len());
        for (g, &a) in grid.iter().enumerate() {
            let truth = theta_of(&cfg.variant, a);
            let mut mean = 0.0;
            let mut mean_sq = 0.0;
            for rep in &successes {
                let v = rep.curves[t][g];
                mean += v;
                mean_sq += (v - truth) * (v - truth);
            }
            mean /= m;
            mean_sq /= m;
            bias_curve.push((mean - truth).abs());
            rmse_curve.push(mean_sq.sqrt());
        }
        let weighted_bias: Vec<f64> = bias_curve
            .iter()
            .zip(&weights)
            .map(|(b, w)| b * w)
            .collect();
        let weighted_mse: Vec<f64> = rmse_curve
            .iter()
            .zip(&weights)
            .map(|(r, w)| r * r * w)
            .collect();
        let integrated = BenchmarkCell {
            bias: trapz(&weighted_bias) / total_weight,
            rmse: (trapz(&weighted_mse) / total_weight).sqrt(),
        };
        let points = report_points
            .iter()
            .map(|&p| {
                let idx = grid
                    .iter()
                    .enumerate()
                    .min_by(|(_, x), (_, y)| {
                        (*x - p).abs().partial_cmp(&(*y - p).abs()).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                (
                    grid[idx],
                    BenchmarkCell {
                        bias: bias_curve[idx],
                        rmse: rmse_curve[idx],
                    },
                )
            })
            .collect();
        rows.push(BenchmarkRow {
            tag,
            points,
            integrated,
        });
    }
    Ok(BenchmarkReport {
        n: cfg.n,
        replications: cfg.replications,
        folds: cfg.folds,
        interval: cfg.interval,
        seed: cfg.seed,
        failures,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(seed: u64) -> BenchmarkConfig {
        let interval = TargetInterval::new(0.25, 0.75).unwrap();
        let mut cfg = BenchmarkConfig::new(400, 3, interval, seed);
        cfg.folds = 2;
        cfg.pi_train_n = 300;
        cfg.grid_size = 11;
        cfg.emp_cap = Some(100);
        cfg.tags = vec![EstimatorTag::AipwIv, EstimatorTag::AipwNuc];
        cfg.nuisance.regression.df_treatment = 3;
        cfg.nuisance.regression.df_covariate = 2;
        cfg
    }

    #[test]
    fn report_shape_and_jensen_inequality() {
        let report = run_benchmark(&tiny_cfg(1)).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_eq!(row.points.len(), 3);
            for (_, cell) in &row.points {
                assert!(cell.rmse >= cell.bias - 1e-12, "row {row:?}");
            }
            assert!(row.integrated.rmse >= row.integrated.bias - 1e-12);
        }
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let cfg = tiny_cfg(7);
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_benchmark(&cfg).unwrap());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn csv_layout() {
        let report = run_benchmark(&tiny_cfg(3)).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("framework,estimator,bias@"));
        assert_eq!(lines.count(), 2);
    }
}
