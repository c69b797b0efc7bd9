//! Synthetic data-generating processes and their analytic components.
//!
//! The main family draws a mixture treatment: with probability `mix` the
//! treatment responds to the instrument, otherwise to the latent
//! confounder. Both branches squash a noisy logistic index into (-1, 1),
//! so every conditional density has the closed form used by
//! [`DgpOracle`]. The outcome is linear, making the true curve
//! `theta(a) = y_a * a`.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::toy::DiscreteToy;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceVector, PointFn, WeightingFunction};

/// Coefficients of the mixture-treatment family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpCoeffs {
    /// Covariate effect on the instrument.
    pub z_on_l: f64,
    /// Instrument noise span: `Z = z_on_l L + z_scale (eps - 0.5)`.
    pub z_scale: f64,
    /// Confounder span: `U = u_scale (eps - 0.5)`.
    pub u_scale: f64,
    /// Instrument coefficient in the treatment index.
    pub logit_z: f64,
    /// Confounder coefficient in the treatment index.
    pub logit_u: f64,
    /// Probability the treatment follows the instrument branch.
    pub mix: f64,
    pub y_a: f64,
    pub y_u: f64,
    pub y_l: f64,
    /// When false, the treatment branch uses an independent copy of the
    /// confounder, removing confounding while keeping the same marginals.
    pub confounded: bool,
}

impl Default for DgpCoeffs {
    fn default() -> Self {
        DgpCoeffs {
            z_on_l: -0.5,
            z_scale: 3.0,
            u_scale: 3.0,
            logit_z: 2.0,
            logit_u: -2.0,
            mix: 0.7,
            y_a: 1.0,
            y_u: 1.0,
            y_l: -0.5,
            confounded: true,
        }
    }
}

/// Which process to draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", content = "params")]
pub enum DgpVariant {
    PaperMain,
    Unconfounded,
    /// Binary instrument with treatment densities that share support and
    /// must cross.
    BinaryIvCrossing,
    DiscreteToy(DiscreteToy),
    Custom(DgpCoeffs),
}

impl DgpVariant {
    pub fn coeffs(&self) -> Option<DgpCoeffs> {
        match self {
            DgpVariant::PaperMain => Some(DgpCoeffs::default()),
            DgpVariant::Unconfounded => Some(DgpCoeffs {
                confounded: false,
                ..DgpCoeffs::default()
            }),
            DgpVariant::Custom(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub seed: u64,
    pub variant: DgpVariant,
}

/// A drawn dataset together with its generating spec and true curve.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub spec: DgpSpec,
}

impl SimulatedData {
    /// True dose-response value at `a`.
    pub fn theta(&self, a: f64) -> f64 {
        theta_of(&self.spec.variant, a)
    }
}

pub fn theta_of(variant: &DgpVariant, a: f64) -> f64 {
    match variant {
        DgpVariant::PaperMain | DgpVariant::Unconfounded => a,
        DgpVariant::BinaryIvCrossing => a,
        DgpVariant::Custom(c) => c.y_a * a,
        DgpVariant::DiscreteToy(toy) => toy.theta(toy.find_a(a)),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws a dataset from the spec; deterministic given the seed.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<SimulatedData> {
    if spec.n == 0 {
        return Err(Error::Misuse("sample size must be positive".into()));
    }
    let dataset = match &spec.variant {
        DgpVariant::DiscreteToy(toy) => toy.sample(spec.n, spec.seed)?,
        DgpVariant::BinaryIvCrossing => sample_binary_crossing(spec.n, spec.seed)?,
        v => sample_mixture(spec.n, spec.seed, v.coeffs().expect("mixture variant"))?,
    };
    Ok(SimulatedData {
        dataset,
        spec: spec.clone(),
    })
}

fn sample_mixture(n: usize, seed: u64, c: DgpCoeffs) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut u_out = Vec::with_capacity(n);
    for _ in 0..n {
        let li = rng.gen::<f64>() - 0.5;
        let ui = c.u_scale * (rng.gen::<f64>() - 0.5);
        let zi = c.z_on_l * li + c.z_scale * (rng.gen::<f64>() - 0.5);
        let eps_az: f64 = rng.sample(StandardNormal);
        let eps_au: f64 = rng.sample(StandardNormal);
        // the unconfounded variant drives the treatment with an independent
        // copy so the confounder never links treatment and outcome
        let u_treat = if c.confounded {
            ui
        } else {
            c.u_scale * (rng.gen::<f64>() - 0.5)
        };
        let p_z = sigmoid(c.logit_z * zi + eps_az);
        let p_u = sigmoid(c.logit_u * u_treat + eps_au);
        let branch_z = rng.gen::<f64>() < c.mix;
        let ai = if branch_z {
            2.0 * p_z - 1.0
        } else {
            2.0 * p_u - 1.0
        };
        let yi = c.y_a * ai + c.y_u * ui + c.y_l * li;
        l.push(li);
        z.push(zi);
        a.push(ai);
        y.push(yi);
        u_out.push(ui);
    }
    Dataset::from_columns(l, 1, z, 1, a, y)?
        .with_latent_u(u_out)?
        .with_treatment_support(-1.0, 1.0)
}

fn sample_binary_crossing(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let zi = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let v = rng.gen::<f64>();
        // density 2a when z = 1, density 2(1 - a) when z = 0; shared
        // support [0, 1] forces the two curves to cross
        let ai = if zi > 0.5 { v.sqrt() } else { 1.0 - v.sqrt() };
        let noise: f64 = rng.sample(StandardNormal);
        y.push(ai + 0.3 * noise);
        z.push(zi);
        a.push(ai);
    }
    Dataset::from_columns(Vec::new(), 0, z, 1, a, y)?.with_treatment_support(0.0, 1.0)
}

// --- analytic components of the mixture family ---

/// Density of `2 sigmoid(m + eps) - 1` at `a`, with standard normal noise.
pub fn squash_density(a: f64, m: f64) -> f64 {
    if a.abs() >= 1.0 {
        return 0.0;
    }
    let w = ((1.0 + a) / (1.0 - a)).ln();
    let t = w - m;
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt() * 2.0 / (1.0 - a * a)
}

fn simpson<G: Fn(f64) -> f64>(f: G, lo: f64, hi: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let step = (hi - lo) / m as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..m {
        let x = lo + step * i as f64;
        acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * step / 3.0
}

/// Analytic nuisance components of the mixture family for the weighting
/// function `pi(z) = p(a0 | z)`, tabulated on a grid with bilinear
/// interpolation for fast evaluation.
#[derive(Debug, Clone)]
pub struct DgpOracle {
    coeffs: DgpCoeffs,
    pub a0: f64,
    a_lo: f64,
    a_step: f64,
    l_lo: f64,
    l_step: f64,
    na: usize,
    nl: usize,
    cbar_a0: f64,
    rho_t: Vec<f64>,
    kappa_t: Vec<f64>,
    mu_t: Vec<f64>,
    eta_t: Vec<f64>,
    delta_t: Vec<f64>,
    p_a_t: Vec<f64>,
    ipg_t: Vec<f64>,
    p_al_t: Vec<f64>,
}

const ZQUAD: usize = 128;

impl DgpOracle {
    pub fn build(coeffs: DgpCoeffs, a0: f64) -> Self {
        let na = 301;
        let nl = 41;
        let a_lo = -0.9995;
        let a_hi = 0.9995;
        let l_lo = -0.5;
        let l_hi = 0.5;
        let a_step = (a_hi - a_lo) / (na - 1) as f64;
        let l_step = (l_hi - l_lo) / (nl - 1) as f64;
        let c = coeffs;
        let u_half = 0.5 * c.u_scale;
        let z_half = 0.5 * c.z_scale;

        let cbar = |a: f64| -> f64 {
            simpson(|u| squash_density(a, c.logit_u * u), -u_half, u_half, ZQUAD) / c.u_scale
        };
        let m_u = |a: f64| -> f64 {
            simpson(|u| u * squash_density(a, c.logit_u * u), -u_half, u_half, ZQUAD) / c.u_scale
        };
        let cbar_a0 = cbar(a0);
        let pi = |z: f64| -> f64 {
            c.mix * squash_density(a0, c.logit_z * z) + (1.0 - c.mix) * cbar_a0
        };

        let mut rho_t = vec![0.0; nl];
        let mut kappa_t = vec![0.0; na * nl];
        let mut mu_t = vec![0.0; na * nl];
        let mut eta_t = vec![0.0; na * nl];
        let mut delta_t = vec![0.0; na * nl];
        let mut p_a_t = vec![0.0; na];
        let mut ipg_t = vec![0.0; na * nl];
        let mut p_al_t = vec![0.0; na * nl];

        let mut cbar_t = vec![0.0; na];
        let mut mu_u_t = vec![0.0; na];
        for ia in 0..na {
            let a = a_lo + a_step * ia as f64;
            cbar_t[ia] = cbar(a);
            mu_u_t[ia] = m_u(a);
        }

        for il in 0..nl {
            let l = l_lo + l_step * il as f64;
            let z_lo = c.z_on_l * l - z_half;
            let z_hi = c.z_on_l * l + z_half;
            rho_t[il] =
                simpson(pi, z_lo, z_hi, ZQUAD) / c.z_scale;
            for ia in 0..na {
                let a = a_lo + a_step * ia as f64;
                // one pass over z gives both E[g_z | l] and E[pi g_z | l]
                let b = simpson(|z| squash_density(a, c.logit_z * z), z_lo, z_hi, ZQUAD)
                    / c.z_scale;
                let ipg = simpson(
                    |z| pi(z) * squash_density(a, c.logit_z * z),
                    z_lo,
                    z_hi,
                    ZQUAD,
                ) / c.z_scale;
                let p_al = c.mix * b + (1.0 - c.mix) * cbar_t[ia];
                let e_pi_al = (c.mix * ipg + (1.0 - c.mix) * cbar_t[ia] * rho_t[il]) / p_al;
                let base = c.y_a * a + c.y_l * l;
                let (eta, e_ypi) = if c.confounded {
                    let eu = (1.0 - c.mix) * mu_u_t[ia] / p_al;
                    let eupi = (1.0 - c.mix) * rho_t[il] * mu_u_t[ia] / p_al;
                    (base + c.y_u * eu, base * e_pi_al + c.y_u * eupi)
                } else {
                    (base, base * e_pi_al)
                };
                let kappa = e_pi_al - rho_t[il];
                let idx = ia * nl + il;
                kappa_t[idx] = kappa;
                eta_t[idx] = eta;
                mu_t[idx] = (e_ypi - eta * rho_t[il]) / kappa;
                ipg_t[idx] = ipg;
                p_al_t[idx] = p_al;
            }
        }
        // marginal treatment density: integrate over the covariate
        for ia in 0..na {
            let mut acc = 0.0;
            for il in 0..nl {
                let w = if il == 0 || il == nl - 1 { 0.5 } else { 1.0 };
                acc += w * p_al_t[ia * nl + il];
            }
            p_a_t[ia] = acc * l_step;
        }
        for ia in 0..na {
            for il in 0..nl {
                let idx = ia * nl + il;
                delta_t[idx] = p_a_t[ia] / p_al_t[idx];
            }
        }

        DgpOracle {
            coeffs,
            a0,
            a_lo,
            a_step,
            l_lo,
            l_step,
            na,
            nl,
            cbar_a0,
            rho_t,
            kappa_t,
            mu_t,
            eta_t,
            delta_t,
            p_a_t,
            ipg_t,
            p_al_t,
        }
    }

    fn a_frac(&self, a: f64) -> (usize, f64) {
        let t = ((a - self.a_lo) / self.a_step).clamp(0.0, (self.na - 1) as f64 - 1e-9);
        let i = t.floor() as usize;
        (i, t - i as f64)
    }

    fn l_frac(&self, l: f64) -> (usize, f64) {
        let t = ((l - self.l_lo) / self.l_step).clamp(0.0, (self.nl - 1) as f64 - 1e-9);
        let i = t.floor() as usize;
        (i, t - i as f64)
    }

    fn bilinear(&self, table: &[f64], a: f64, l: f64) -> f64 {
        let (ia, fa) = self.a_frac(a);
        let (il, fl) = self.l_frac(l);
        let nl = self.nl;
        let v00 = table[ia * nl + il];
        let v01 = table[ia * nl + il + 1];
        let v10 = table[(ia + 1) * nl + il];
        let v11 = table[(ia + 1) * nl + il + 1];
        v00 * (1.0 - fa) * (1.0 - fl) + v01 * (1.0 - fa) * fl + v10 * fa * (1.0 - fl)
            + v11 * fa * fl
    }

    fn linear_l(&self, table: &[f64], l: f64) -> f64 {
        let (il, fl) = self.l_frac(l);
        table[il] * (1.0 - fl) + table[il + 1] * fl
    }

    fn linear_a(&self, table: &[f64], a: f64) -> f64 {
        let (ia, fa) = self.a_frac(a);
        table[ia] * (1.0 - fa) + table[ia + 1] * fa
    }

    pub fn rho(&self, l: f64) -> f64 {
        self.linear_l(&self.rho_t, l)
    }

    pub fn kappa(&self, a: f64, l: f64) -> f64 {
        self.bilinear(&self.kappa_t, a, l)
    }

    pub fn mu(&self, a: f64, l: f64) -> f64 {
        self.bilinear(&self.mu_t, a, l)
    }

    pub fn eta(&self, a: f64, l: f64) -> f64 {
        self.bilinear(&self.eta_t, a, l)
    }

    pub fn delta(&self, a: f64, l: f64) -> f64 {
        self.bilinear(&self.delta_t, a, l)
    }

    pub fn p_a(&self, a: f64) -> f64 {
        self.linear_a(&self.p_a_t, a)
    }

    pub fn p_a_given_l(&self, a: f64, l: f64) -> f64 {
        self.bilinear(&self.p_al_t, a, l)
    }

    /// The true weighting function `pi(z) = p(a0 | z)`.
    pub fn pi(&self) -> WeightingFunction {
        let c = self.coeffs;
        let a0 = self.a0;
        let cbar_a0 = self.cbar_a0;
        let f = move |z: &[f64], _l: &[f64]| -> f64 {
            c.mix * squash_density(a0, c.logit_z * z[0]) + (1.0 - c.mix) * cbar_a0
        };
        let z_max = c.z_on_l.abs() * 0.5 + 0.5 * c.z_scale;
        let bound = (0..200)
            .map(|i| {
                let z = -z_max + 2.0 * z_max * i as f64 / 199.0;
                f(&[z], &[])
            })
            .fold(0.0f64, f64::max)
            * 1.5;
        WeightingFunction::analytic(format!("density-oracle@{a0}"), bound, Arc::new(f))
    }

    /// Exact nuisance vector backed by the tabulated components.
    pub fn nuisances(&self) -> NuisanceVector {
        let me = Arc::new(self.clone());
        let mk = |which: usize| -> PointFn {
            let o = Arc::clone(&me);
            Arc::new(move |a, l: &[f64]| {
                let lv = l.first().copied().unwrap_or(0.0);
                match which {
                    0 => o.mu(a, lv),
                    1 => o.kappa(a, lv),
                    2 => o.eta(a, lv),
                    _ => o.delta(a, lv),
                }
            })
        };
        let rho = {
            let o = Arc::clone(&me);
            Arc::new(move |l: &[f64]| o.rho(l.first().copied().unwrap_or(0.0)))
        };
        NuisanceVector::exact(mk(0), rho, mk(1), mk(2), mk(3))
    }

    /// Comparison weight `omega(a; u, l)`; identically one for this family.
    pub fn omega(&self, a: f64, u: f64, l: f64) -> f64 {
        let c = self.coeffs;
        let rho = self.rho(l);
        let g_u = squash_density(a, c.logit_u * u);
        let b = (self.p_a_given_l(a, l) - (1.0 - c.mix) * self.linear_a_cbar(a)) / c.mix;
        let p_aul = c.mix * b + (1.0 - c.mix) * g_u;
        let ipg = self.bilinear(&self.ipg_t, a, l);
        let e_pi_aul = (c.mix * ipg + (1.0 - c.mix) * g_u * rho) / p_aul;
        let e_pi_al = (c.mix * ipg + (1.0 - c.mix) * self.linear_a_cbar(a) * rho)
            / self.p_a_given_l(a, l);
        (p_aul / self.p_a_given_l(a, l)) * (e_pi_aul - rho) / (e_pi_al - rho)
    }

    fn linear_a_cbar(&self, a: f64) -> f64 {
        let c = self.coeffs;
        let u_half = 0.5 * c.u_scale;
        simpson(|u| squash_density(a, c.logit_u * u), -u_half, u_half, 64) / c.u_scale
    }
}
