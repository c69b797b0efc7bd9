//! Executable checks of the identification preconditions: instrument
//! relevance, weighting-function validity over an interval, sign structure
//! of the relevance signal, finite covers, and the additivity weight.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetInterval};
use crate::density::{CondKde, Kde1d};
use crate::error::{Error, Result};
use crate::nuisance::{
    fit_regression, zpi_column, DensityMethod, NuisanceConfig, WeightingFunction,
};
use crate::sim::{DgpOracle, DiscreteToy, SimulatedData};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    /// Quantile grid points per covariate dimension (product capped at 81).
    pub l_grid_points: usize,
    /// Evaluation grid size over the treatment interval.
    pub a_grid_size: usize,
    /// URWF threshold; `None` resolves to `0.05 sd(Z_pi)`.
    pub epsilon: Option<f64>,
    /// Relevance threshold for flagging weak grid points.
    pub divergence_threshold: f64,
    /// Neighbors used to approximate the conditional law of the instrument.
    pub knn: usize,
    /// How densities entering ratios are estimated.
    pub density: DensityMethod,
    pub nuisance: NuisanceConfig,
    /// Fraction of rows held out to train cover weighting functions.
    pub pi_train_fraction: f64,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            l_grid_points: 9,
            a_grid_size: 25,
            epsilon: None,
            divergence_threshold: 0.05,
            knn: 200,
            density: DensityMethod::default(),
            nuisance: NuisanceConfig::default(),
            pi_train_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Quantile grid over the covariates: `points` per dimension, product
/// capped at 81 cells. A covariate-free dataset yields one empty cell.
pub fn covariate_grid(data: &Dataset, points: usize) -> Vec<Vec<f64>> {
    let d = data.l_dim();
    if d == 0 {
        return vec![vec![]];
    }
    let per_dim = if points.pow(d as u32) > 81 {
        (81f64.powf(1.0 / d as f64)).floor().max(2.0) as usize
    } else {
        points
    };
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut col: Vec<f64> = (0..data.len()).map(|i| data.l_row(i)[j]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut axis: Vec<f64> = (0..per_dim)
            .map(|k| {
                let q = (k as f64 + 0.5) / per_dim as f64;
                col[((q * col.len() as f64) as usize).min(col.len() - 1)]
            })
            .collect();
        axis.dedup_by(|a, b| a == b);
        axes.push(axis);
    }
    let mut grid = vec![vec![]];
    for axis in &axes {
        let mut next = Vec::with_capacity(grid.len() * axis.len());
        for cell in &grid {
            for &v in axis {
                let mut c = cell.clone();
                c.push(v);
                next.push(c);
            }
        }
        grid = next;
    }
    grid
}

// --- relevance ---

/// Pointwise relevance estimates over a treatment grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceCurve {
    pub a_grid: Vec<f64>,
    /// Minimum over the covariate grid.
    pub min_d: Vec<f64>,
    /// Mean over the covariate grid.
    pub mean_d: Vec<f64>,
    pub threshold: f64,
    /// Grid points whose minimum falls below the threshold.
    pub flagged: Vec<bool>,
    /// Long-format cells `(a, l, value, low_density_flag)`.
    pub cells: Vec<(f64, Vec<f64>, f64, bool)>,
}

impl RelevanceCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "a,l,value,flag")?;
        for (a, l, v, flag) in &self.cells {
            let ltxt = l
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(w, "{a},{ltxt},{v},{}", u8::from(*flag))?;
        }
        Ok(())
    }
}

/// Variance of the density ratio `p(a | Z, l) / p(a | l)` over the
/// conditional law of the instrument, per grid cell.
pub fn chi2_divergence_curve(
    data: &Dataset,
    a_grid: &[f64],
    config: &DiagnosticsConfig,
) -> Result<RelevanceCurve> {
    let l_grid = covariate_grid(data, config.l_grid_points);
    let n = data.len();
    let l_dim = data.l_dim();
    let zl_dim = data.z_dim() + l_dim;

    enum Ratio<'a> {
        Kde {
            joint: CondKde<f64>,
            given_l: Option<CondKde<f64>>,
            marginal: Kde1d<f64>,
            data: &'a Dataset,
        },
        Frequency(&'a Dataset),
    }

    let ratio = match &config.density {
        DensityMethod::Kde {
            bandwidth_multiplier,
        } => {
            let mut zl = Vec::with_capacity(n * zl_dim);
            let mut lcols = Vec::with_capacity(n * l_dim);
            for i in 0..n {
                zl.extend_from_slice(data.z_row(i));
                zl.extend_from_slice(data.l_row(i));
                lcols.extend_from_slice(data.l_row(i));
            }
            let joint = CondKde::fit(data.a(), &zl, zl_dim, *bandwidth_multiplier)?;
            let given_l = if l_dim > 0 {
                Some(CondKde::fit(data.a(), &lcols, l_dim, *bandwidth_multiplier)?)
            } else {
                None
            };
            let marginal = Kde1d::fit(data.a(), *bandwidth_multiplier)?;
            Ratio::Kde {
                joint,
                given_l,
                marginal,
                data,
            }
        }
        DensityMethod::Frequency => Ratio::Frequency(data),
    };

    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);

    let mut cells = Vec::new();
    let mut min_d = Vec::with_capacity(a_grid.len());
    let mut mean_d = Vec::with_capacity(a_grid.len());
    for &a in a_grid {
        let mut per_l = Vec::with_capacity(l_grid.len());
        for l in &l_grid {
            let (value, low) = match &ratio {
                Ratio::Kde {
                    joint,
                    given_l,
                    marginal,
                    data,
                } => {
                    // z values of the covariate-nearest rows stand in for
                    // the conditional law of the instrument at l
                    let mut idx: Vec<usize> = (0..n).collect();
                    if l_dim > 0 {
                        idx.sort_by(|&i, &j| {
                            let di: f64 = data
                                .l_row(i)
                                .iter()
                                .zip(l)
                                .map(|(x, y)| (x - y).powi(2))
                                .sum();
                            let dj: f64 = data
                                .l_row(j)
                                .iter()
                                .zip(l)
                                .map(|(x, y)| (x - y).powi(2))
                                .sum();
                            di.partial_cmp(&dj).unwrap()
                        });
                        idx.truncate(config.knn.min(n));
                    }
                    let denom = match given_l {
                        Some(m) => m.pdf_or_zero(a, l),
                        None => marginal.pdf(a),
                    };
                    if denom <= 1e-12 {
                        (0.0, true)
                    } else {
                        let mut q = vec![0.0; zl_dim];
                        q[data.z_dim()..].copy_from_slice(l);
                        let mut mean = 0.0;
                        let mut mean_sq = 0.0;
                        for &i in &idx {
                            q[..data.z_dim()].copy_from_slice(data.z_row(i));
                            let r = joint.pdf_or_zero(a, &q) / denom;
                            mean += r;
                            mean_sq += r * r;
                        }
                        let m = idx.len() as f64;
                        mean /= m;
                        mean_sq /= m;
                        ((mean_sq - mean * mean).max(0.0), false)
                    }
                }
                Ratio::Frequency(data) => {
                    // exact empirical law: rows matching l, grouped by z
                    let rows: Vec<usize> = (0..n)
                        .filter(|&i| l_dim == 0 || same(data.l_row(i), l))
                        .collect();
                    if rows.is_empty() {
                        (0.0, true)
                    } else {
                        let m = rows.len() as f64;
                        let p_al = rows
                            .iter()
                            .filter(|&&i| (data.a()[i] - a).abs() < 1e-9)
                            .count() as f64
                            / m;
                        if p_al <= 0.0 {
                            (0.0, true)
                        } else {
                            // group by distinct z
                            let mut groups: Vec<(Vec<f64>, f64, f64)> = Vec::new();
                            for &i in &rows {
                                let z = data.z_row(i);
                                let hit = (data.a()[i] - a).abs() < 1e-9;
                                match groups.iter_mut().find(|(gz, _, _)| same(gz, z)) {
                                    Some((_, cnt, hits)) => {
                                        *cnt += 1.0;
                                        if hit {
                                            *hits += 1.0;
                                        }
                                    }
                                    None => groups.push((
                                        z.to_vec(),
                                        1.0,
                                        if hit { 1.0 } else { 0.0 },
                                    )),
                                }
                            }
                            let mut mean = 0.0;
                            let mut mean_sq = 0.0;
                            for (_, cnt, hits) in &groups {
                                let w = cnt / m;
                                let r = (hits / cnt) / p_al;
                                mean += w * r;
                                mean_sq += w * r * r;
                            }
                            ((mean_sq - mean * mean).max(0.0), false)
                        }
                    }
                }
            };
            per_l.push(value);
            cells.push((a, l.clone(), value, low));
        }
        let mn = per_l.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = per_l.iter().sum::<f64>() / per_l.len() as f64;
        min_d.push(mn);
        mean_d.push(mean);
    }
    let flagged = min_d
        .iter()
        .map(|&d| d < config.divergence_threshold)
        .collect();
    Ok(RelevanceCurve {
        a_grid: a_grid.to_vec(),
        min_d,
        mean_d,
        threshold: config.divergence_threshold,
        flagged,
        cells,
    })
}

// --- URWF verdicts ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UrwfVerdict {
    pub interval: TargetInterval,
    pub min_abs_kappa: f64,
    pub sign_constant: bool,
    pub epsilon: f64,
    pub pass: bool,
    /// Grid dimensions the verdict scanned `(a points, l cells)`.
    pub grid: (usize, usize),
    pub weighting_id: String,
}

/// Fits the relevance signal for `pi` and scans it over the interval.
pub fn check_urwf(
    data: &Dataset,
    pi: &WeightingFunction,
    interval: &TargetInterval,
    epsilon: Option<f64>,
    config: &DiagnosticsConfig,
) -> Result<UrwfVerdict> {
    let zpi = zpi_column(data, pi)?;
    let eps = epsilon
        .or(config.epsilon)
        .unwrap_or_else(|| 0.05 * sd(&zpi));
    let n = data.len();
    let l_dim = data.l_dim();
    let mut x_al = Vec::with_capacity(n * (1 + l_dim));
    let mut x_l = Vec::with_capacity(n * l_dim);
    for i in 0..n {
        x_al.push(data.a()[i]);
        x_al.extend_from_slice(data.l_row(i));
        x_l.extend_from_slice(data.l_row(i));
    }
    let kreg = fit_regression(&x_al, 1 + l_dim, &zpi, &config.nuisance.regression)?;
    let rho = fit_regression(&x_l, l_dim, &zpi, &config.nuisance.regression)?;

    let a_grid = interval.grid(config.a_grid_size.max(2));
    let l_grid = covariate_grid(data, config.l_grid_points);
    let mut min_abs = f64::INFINITY;
    let mut saw_pos = false;
    let mut saw_neg = false;
    let mut q = Vec::with_capacity(1 + l_dim);
    for l in &l_grid {
        let r = rho.predict(l);
        for &a in &a_grid {
            q.clear();
            q.push(a);
            q.extend_from_slice(l);
            let kappa = kreg.predict(&q) - r;
            min_abs = min_abs.min(kappa.abs());
            if kappa > 0.0 {
                saw_pos = true;
            }
            if kappa < 0.0 {
                saw_neg = true;
            }
        }
    }
    let sign_constant = !(saw_pos && saw_neg);
    Ok(UrwfVerdict {
        interval: *interval,
        min_abs_kappa: min_abs,
        sign_constant,
        epsilon: eps,
        pass: sign_constant && min_abs >= eps,
        grid: (a_grid.len(), l_grid.len()),
        weighting_id: pi.id.clone(),
    })
}

/// Relevance-signal values over an `(a, l)` grid, with zero crossings
/// flagged per covariate cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaSignMap {
    pub a_grid: Vec<f64>,
    pub l_grid: Vec<Vec<f64>>,
    /// Row-major `l_grid.len() x a_grid.len()`.
    pub values: Vec<f64>,
    /// Per covariate cell: does the signal change sign along the grid?
    pub crossings: Vec<bool>,
}

impl KappaSignMap {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "a,l,value,crossing")?;
        for (r, l) in self.l_grid.iter().enumerate() {
            let ltxt = l
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";");
            for (c, a) in self.a_grid.iter().enumerate() {
                writeln!(
                    w,
                    "{a},{ltxt},{},{}",
                    self.values[r * self.a_grid.len() + c],
                    u8::from(self.crossings[r])
                )?;
            }
        }
        Ok(())
    }
}

pub fn kappa_sign_map(
    data: &Dataset,
    pi: &WeightingFunction,
    a_grid: &[f64],
    config: &DiagnosticsConfig,
) -> Result<KappaSignMap> {
    let zpi = zpi_column(data, pi)?;
    let n = data.len();
    let l_dim = data.l_dim();
    let mut x_al = Vec::with_capacity(n * (1 + l_dim));
    let mut x_l = Vec::with_capacity(n * l_dim);
    for i in 0..n {
        x_al.push(data.a()[i]);
        x_al.extend_from_slice(data.l_row(i));
        x_l.extend_from_slice(data.l_row(i));
    }
    let kreg = fit_regression(&x_al, 1 + l_dim, &zpi, &config.nuisance.regression)?;
    let rho = fit_regression(&x_l, l_dim, &zpi, &config.nuisance.regression)?;
    let l_grid = covariate_grid(data, config.l_grid_points);
    let mut values = Vec::with_capacity(l_grid.len() * a_grid.len());
    let mut crossings = Vec::with_capacity(l_grid.len());
    let mut q = Vec::with_capacity(1 + l_dim);
    for l in &l_grid {
        let r = rho.predict(l);
        let mut saw_pos = false;
        let mut saw_neg = false;
        for &a in a_grid {
            q.clear();
            q.push(a);
            q.extend_from_slice(l);
            let kappa = kreg.predict(&q) - r;
            values.push(kappa);
            if kappa > 0.0 {
                saw_pos = true;
            }
            if kappa < 0.0 {
                saw_neg = true;
            }
        }
        crossings.push(saw_pos && saw_neg);
    }
    Ok(KappaSignMap {
        a_grid: a_grid.to_vec(),
        l_grid,
        values,
        crossings,
    })
}

// --- finite covers ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverMember {
    pub center: f64,
    pub radius: f64,
    pub min_abs_kappa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverPlan {
    pub compact: (f64, f64),
    pub members: Vec<CoverMember>,
}

impl CoverPlan {
    /// Exact interval arithmetic: the open members cover the compact set.
    pub fn covers(&self) -> bool {
        let (lo, hi) = self.compact;
        let mut frontier = lo;
        // members are ordered; each must reach past the current frontier
        for m in &self.members {
            if m.center - m.radius >= frontier && frontier != lo {
                return false;
            }
            if m.center - m.radius > frontier {
                return false;
            }
            frontier = frontier.max(m.center + m.radius);
        }
        frontier > hi
    }
}

/// Greedy sweep: at each frontier, build the density weighting function
/// there, grow its radius by 1.5 while the verdict passes (one bisection
/// after the first failure), then advance.
pub fn cover_interval(
    data: &Dataset,
    compact: (f64, f64),
    epsilon: Option<f64>,
    config: &DiagnosticsConfig,
) -> Result<CoverPlan> {
    let (lo, hi) = compact;
    let support = data.treatment_support();
    if !(support.0 < lo && hi < support.1) {
        return Err(Error::InvalidInterval(format!(
            "compact [{lo}, {hi}] must be strictly inside the treatment support"
        )));
    }
    // hold out a slice for the weighting-function density model
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let cut = ((config.pi_train_fraction * n as f64) as usize).clamp(50.min(n / 2), n - 1);
    let train = data.subset(&order[..cut])?;
    let check = data.subset(&order[cut..])?;
    let bw = match config.density {
        DensityMethod::Kde {
            bandwidth_multiplier,
        } => bandwidth_multiplier,
        DensityMethod::Frequency => 1.0,
    };
    let zl_dim = train.z_dim() + train.l_dim();
    let mut cov = Vec::with_capacity(train.len() * zl_dim);
    for i in 0..train.len() {
        cov.extend_from_slice(train.z_row(i));
        cov.extend_from_slice(train.l_row(i));
    }
    let model = std::sync::Arc::new(crate::nuisance::fit_conditional_density(
        train.a(),
        &cov,
        zl_dim,
        bw,
    )?);

    let h0 = 0.05 * (support.1 - support.0);
    let clamp_iv = |c: f64, h: f64| -> Result<TargetInterval> {
        let pad = 1e-6 * (support.1 - support.0);
        TargetInterval::new(
            (c - h).max(support.0 + pad),
            (c + h).min(support.1 - pad),
        )
    };
    let passes = |c: f64, h: f64| -> Result<Option<f64>> {
        let pi = WeightingFunction::conditional_density(c, std::sync::Arc::clone(&model), f64::INFINITY);
        let v = check_urwf(&check, &pi, &clamp_iv(c, h)?, epsilon, config)?;
        Ok(if v.pass { Some(v.min_abs_kappa) } else { None })
    };

    let mut members = Vec::new();
    let mut frontier = lo;
    for _ in 0..64 {
        let center = frontier;
        let mut h_pass: Option<(f64, f64)> = None;
        let mut h = h0;
        let mut h_fail = None;
        // expand until failure
        loop {
            match passes(center, h)? {
                Some(min_k) => {
                    h_pass = Some((h, min_k));
                    h *= 1.5;
                    if h > (support.1 - support.0) {
                        break;
                    }
                }
                None => {
                    h_fail = Some(h);
                    break;
                }
            }
        }
        // one bisection step between the last pass and the failure
        match (h_pass, h_fail) {
            (Some((hp, min_k)), Some(hf)) => {
                let mid = 0.5 * (hp + hf);
                match passes(center, mid)? {
                    Some(mk) => members.push(CoverMember {
                        center,
                        radius: mid,
                        min_abs_kappa: mk,
                    }),
                    None => members.push(CoverMember {
                        center,
                        radius: hp,
                        min_abs_kappa: min_k,
                    }),
                }
            }
            (Some((hp, min_k)), None) => members.push(CoverMember {
                center,
                radius: hp,
                min_abs_kappa: min_k,
            }),
            (None, Some(hf)) => {
                // initial radius already failing: bisect downward once
                match passes(center, 0.5 * hf)? {
                    Some(mk) => members.push(CoverMember {
                        center,
                        radius: 0.5 * hf,
                        min_abs_kappa: mk,
                    }),
                    None => return Err(Error::CoverageGap { at: center }),
                }
            }
            (None, None) => return Err(Error::CoverageGap { at: center }),
        }
        let last = members.last().unwrap();
        frontier = last.center + last.radius;
        if frontier > hi {
            let plan = CoverPlan {
                compact,
                members,
            };
            debug_assert!(plan.covers());
            return Ok(plan);
        }
    }
    Err(Error::CoverageGap { at: frontier })
}

// --- additivity weight ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AivBin {
    pub l_lo: f64,
    pub l_hi: f64,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    /// Largest pointwise deviation of the weight from one inside the bin.
    pub max_abs_dev: f64,
}

/// Bins the stored confounder draws by covariate quantiles and reports the
/// weight's per-bin mean and worst pointwise deviation from one, using the
/// generating process's analytic components.
pub fn aiv_weight_check(
    sim: &SimulatedData,
    oracle: &DgpOracle,
    a: f64,
    l_bins: usize,
) -> Result<Vec<AivBin>> {
    let data = &sim.dataset;
    let u = data
        .latent_u()
        .ok_or_else(|| Error::Misuse("latent confounder values are required".into()))?;
    if data.l_dim() != 1 {
        return Err(Error::Misuse("expected a single covariate column".into()));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| data.l_row(i)[0].partial_cmp(&data.l_row(j)[0]).unwrap());
    let mut bins = Vec::with_capacity(l_bins);
    for b in 0..l_bins {
        let lo_i = b * n / l_bins;
        let hi_i = ((b + 1) * n / l_bins).min(n);
        let rows = &order[lo_i..hi_i];
        if rows.is_empty() {
            continue;
        }
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        let mut max_dev: f64 = 0.0;
        for &i in rows {
            let w = oracle.omega(a, u[i], data.l_row(i)[0]);
            mean += w;
            mean_sq += w * w;
            max_dev = max_dev.max((w - 1.0).abs());
        }
        let m = rows.len() as f64;
        mean /= m;
        mean_sq /= m;
        let var = (mean_sq - mean * mean).max(0.0);
        bins.push(AivBin {
            l_lo: data.l_row(rows[0])[0],
            l_hi: data.l_row(*rows.last().unwrap())[0],
            count: rows.len(),
            mean,
            se: (var / m).sqrt(),
            max_abs_dev: max_dev,
        });
    }
    Ok(bins)
}

/// Exact per-covariate-level report for an enumerated instance.
pub fn aiv_weight_check_toy(
    toy: &DiscreteToy,
    pi: &WeightingFunction,
    a_index: usize,
) -> Result<Vec<AivBin>> {
    let mut bins = Vec::with_capacity(toy.l_levels.len());
    for il in 0..toy.l_levels.len() {
        let mean = toy.omega_mean_given_l(pi, il, a_index)?;
        let mut max_dev: f64 = 0.0;
        for iu in 0..toy.u_levels.len() {
            let w = toy.omega(pi, il, iu, a_index)?;
            max_dev = max_dev.max((w - 1.0).abs());
        }
        let l0 = toy.l_levels[il].first().copied().unwrap_or(0.0);
        bins.push(AivBin {
            l_lo: l0,
            l_hi: l0,
            count: toy.u_levels.len(),
            mean,
            se: 0.0,
            max_abs_dev: max_dev,
        });
    }
    Ok(bins)
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_dgp, toys, DgpSpec, DgpVariant};

    #[test]
    fn chi2_matches_enumeration_on_discrete_instance() {
        let toy = toys::aiv_binary_ternary();
        // dataset whose empirical frequencies equal the law exactly: one row
        // per outcome cell, replicated proportionally
        let mut obs = Vec::new();
        for (l, z, a, y, p) in toy.observed_law() {
            let count = (p * 4000.0).round() as usize;
            assert!(
                ((p * 4000.0) - count as f64).abs() < 1e-9,
                "probability {p} is not a multiple of 1/4000"
            );
            for _ in 0..count {
                obs.push(crate::data::Observation {
                    l: l.clone(),
                    z: z.clone(),
                    a,
                    y,
                });
            }
        }
        let data = Dataset::from_observations(&obs).unwrap();
        let cfg = DiagnosticsConfig {
            density: DensityMethod::Frequency,
            ..Default::default()
        };
        let a_grid: Vec<f64> = toy.a_levels.clone();
        let curve = chi2_divergence_curve(&data, &a_grid, &cfg).unwrap();
        for (a, l, value, _) in &curve.cells {
            let ia = toy.find_a(*a);
            let il = toy.find_l(l);
            let exact = toy.chi2_divergence(il, ia);
            assert!(
                (value - exact).abs() < 1e-10,
                "cell ({a}, {l:?}): {value} vs {exact}"
            );
        }
    }

    #[test]
    fn chi2_near_zero_for_irrelevant_instrument() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let mut z = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let li = rng.gen::<f64>() - 0.5;
            let zi = rng.gen::<f64>() - 0.5;
            let ai = 0.8 * li + 0.5 * (rng.gen::<f64>() - 0.5); // A independent of Z given L
            l.push(li);
            z.push(zi);
            a.push(ai);
            y.push(ai + li);
        }
        let data = Dataset::from_columns(l, 1, z, 1, a, y).unwrap();
        let cfg = DiagnosticsConfig {
            knn: 500,
            l_grid_points: 3,
            ..Default::default()
        };
        let curve = chi2_divergence_curve(&data, &[-0.1, 0.0, 0.1], &cfg).unwrap();
        for &d in &curve.min_d {
            assert!(d <= 0.02, "divergence {d} for irrelevant instrument");
        }
        assert!(curve.flagged.iter().all(|&f| f));
    }

    #[test]
    fn urwf_passes_for_density_rwf_and_fails_for_raw_instrument() {
        let sim = simulate_dgp(&DgpSpec {
            n: 3000,
            seed: 4,
            variant: DgpVariant::PaperMain,
        })
        .unwrap();
        let pi_train = simulate_dgp(&DgpSpec {
            n: 2000,
            seed: 104,
            variant: DgpVariant::PaperMain,
        })
        .unwrap();
        let cfg = DiagnosticsConfig::default();
        let narrow = TargetInterval::new(0.25, 0.75).unwrap();
        let pi = crate::nuisance::make_density_rwf(&pi_train.dataset, 0.5, 1.0).unwrap();
        let v = check_urwf(&sim.dataset, &pi, &narrow, None, &cfg).unwrap();
        assert!(v.pass, "verdict {v:?}");

        // over the whole support the raw instrument must lose sign constancy
        let wide = TargetInterval::new(-1.0, 1.0).unwrap();
        let pi_z = WeightingFunction::raw_coordinate(0);
        let v = check_urwf(&sim.dataset, &pi_z, &wide, None, &cfg).unwrap();
        assert!(!v.pass);
        assert!(!v.sign_constant, "verdict {v:?}");
    }

    #[test]
    fn verdict_monotone_under_interval_nesting() {
        let sim = simulate_dgp(&DgpSpec {
            n: 2000,
            seed: 5,
            variant: DgpVariant::PaperMain,
        })
        .unwrap();
        let pi = WeightingFunction::raw_coordinate(0);
        let cfg = DiagnosticsConfig::default();
        let outer = TargetInterval::new(0.3, 0.7).unwrap();
        let v_outer = check_urwf(&sim.dataset, &pi, &outer, Some(0.01), &cfg).unwrap();
        if v_outer.pass {
            let inner = TargetInterval::new(0.4, 0.6).unwrap();
            let v_inner = check_urwf(&sim.dataset, &pi, &inner, Some(0.01), &cfg).unwrap();
            assert!(v_inner.pass);
            assert!(v_inner.min_abs_kappa >= v_outer.min_abs_kappa - 1e-9);
        }
    }

    #[test]
    fn binary_crossing_detected() {
        let sim = simulate_dgp(&DgpSpec {
            n: 4000,
            seed: 6,
            variant: DgpVariant::BinaryIvCrossing,
        })
        .unwrap();
        let pi = WeightingFunction::raw_coordinate(0);
        let cfg = DiagnosticsConfig::default();
        let a_grid: Vec<f64> = (0..21).map(|i| 0.05 + 0.9 * i as f64 / 20.0).collect();
        let map = kappa_sign_map(&sim.dataset, &pi, &a_grid, &cfg).unwrap();
        assert!(map.crossings.iter().any(|&c| c), "no crossing found");
    }

    #[test]
    fn constant_weighting_function_gives_null_map() {
        let sim = simulate_dgp(&DgpSpec {
            n: 1500,
            seed: 7,
            variant: DgpVariant::PaperMain,
        })
        .unwrap();
        let pi = WeightingFunction::polynomial(0, 0); // z^0 = 1
        let cfg = DiagnosticsConfig::default();
        let a_grid: Vec<f64> = (0..11).map(|i| -0.5 + i as f64 / 10.0).collect();
        let map = kappa_sign_map(&sim.dataset, &pi, &a_grid, &cfg).unwrap();
        for v in &map.values {
            assert!(v.abs() < 1e-6, "kappa {v} for constant weighting");
        }
    }

    #[test]
    fn aiv_weight_exact_on_toys() {
        let toy = toys::aiv_binary_ternary();
        let pi = WeightingFunction::raw_coordinate(0);
        for ia in 0..toy.a_levels.len() {
            for bin in aiv_weight_check_toy(&toy, &pi, ia).unwrap() {
                assert!((bin.mean - 1.0).abs() < 1e-10);
                assert!(bin.max_abs_dev < 1e-10);
            }
        }
        let toy = toys::multiplicative_toy();
        let mut detected = false;
        for ia in 0..toy.a_levels.len() {
            for bin in aiv_weight_check_toy(&toy, &pi, ia).unwrap() {
                assert!((bin.mean - 1.0).abs() < 1e-10); // identity holds regardless
                if bin.max_abs_dev > 1e-3 {
                    detected = true;
                }
            }
        }
        assert!(detected);
    }

    #[test]
    fn aiv_weight_requires_latent_u() {
        let sim = simulate_dgp(&DgpSpec {
            n: 500,
            seed: 8,
            variant: DgpVariant::PaperMain,
        })
        .unwrap();
        let oracle = crate::sim::DgpOracle::build(crate::sim::DgpCoeffs::default(), 0.5);
        // strip the latent column
        let obs: Vec<_> = (0..sim.dataset.len()).map(|i| sim.dataset.row(i)).collect();
        let stripped = SimulatedData {
            dataset: Dataset::from_observations(&obs).unwrap(),
            spec: sim.spec.clone(),
        };
        assert!(matches!(
            aiv_weight_check(&stripped, &oracle, 0.5, 4),
            Err(Error::Misuse(_))
        ));
        // with the stored confounder the weights sit at one
        let bins = aiv_weight_check(&sim, &oracle, 0.5, 4).unwrap();
        for bin in bins {
            assert!((bin.mean - 1.0).abs() < 3.0 * bin.se + 1e-3, "bin {bin:?}");
            assert!(bin.max_abs_dev < 1e-3);
        }
    }
}
