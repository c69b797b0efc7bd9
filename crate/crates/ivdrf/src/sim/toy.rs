//! Fully enumerated discrete instances.
//!
//! A toy fixes finite supports for `(L, U, Z, A)`, probability tables for
//! the joint law, and a deterministic outcome `y(l, u, a)`. Everything the
//! estimators target (conditional means, densities, scores, the curve
//! itself) is then computable exactly by enumeration, which is what the
//! oracle test suites need.

use std::sync::Arc;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceVector, PointFn, WeightingFunction};
use crate::scores::EmpiricalMeasure;

const TOL: f64 = 1e-9;

/// A fully enumerated law over `(L, U, Z, A, Y)` with finite supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteToy {
    /// Distinct covariate vectors (a single empty vector models no
    /// covariates).
    pub l_levels: Vec<Vec<f64>>,
    pub u_levels: Vec<f64>,
    pub z_levels: Vec<Vec<f64>>,
    pub a_levels: Vec<f64>,
    /// `P(L = l)`.
    pub p_l: Vec<f64>,
    /// `P(U = u | L = l)`, indexed `[l][u]`.
    pub p_u_given_l: Vec<Vec<f64>>,
    /// `P(Z = z | L = l)`, indexed `[l][z]` (instrument independent of the
    /// confounder given covariates by construction).
    pub p_z_given_l: Vec<Vec<f64>>,
    /// `P(A = a | Z = z, U = u, L = l)`, indexed `[l][z][u][a]`.
    pub p_a_given_zul: Vec<Vec<Vec<Vec<f64>>>>,
    /// Deterministic outcome `y(l, u, a)`, indexed `[l][u][a]`.
    pub y_of: Vec<Vec<Vec<f64>>>,
}

fn pmf_ok(p: &[f64]) -> bool {
    p.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v))
        && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

impl DiscreteToy {
    /// Additive construction: `P(A = a | z, u, l)` is a mixture
    /// `t(l) q(a | z, l) + (1 - t(l)) r(a | u, l)`, which decomposes into a
    /// `z`-part plus a `u`-part by design.
    #[allow(clippy::too_many_arguments)]
    pub fn additive_mixture(
        l_levels: Vec<Vec<f64>>,
        u_levels: Vec<f64>,
        z_levels: Vec<Vec<f64>>,
        a_levels: Vec<f64>,
        p_l: Vec<f64>,
        p_u_given_l: Vec<Vec<f64>>,
        p_z_given_l: Vec<Vec<f64>>,
        mix: Vec<f64>,
        q_a_given_zl: Vec<Vec<Vec<f64>>>,
        r_a_given_ul: Vec<Vec<Vec<f64>>>,
        y_of: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let nl = l_levels.len();
        let nz = z_levels.len();
        let nu = u_levels.len();
        let na = a_levels.len();
        let mut p_a_given_zul = vec![vec![vec![vec![0.0; na]; nu]; nz]; nl];
        for il in 0..nl {
            let t = mix[il];
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::SpecError(format!("mixture weight {t} outside [0, 1]")));
            }
            for iz in 0..nz {
                for iu in 0..nu {
                    for ia in 0..na {
                        p_a_given_zul[il][iz][iu][ia] =
                            t * q_a_given_zl[il][iz][ia] + (1.0 - t) * r_a_given_ul[il][iu][ia];
                    }
                }
            }
        }
        let toy = DiscreteToy {
            l_levels,
            u_levels,
            z_levels,
            a_levels,
            p_l,
            p_u_given_l,
            p_z_given_l,
            p_a_given_zul,
            y_of,
        };
        toy.validate()?;
        Ok(toy)
    }

    /// Multiplicative construction: `P(A = a | z, u, l)` proportional to
    /// `q(a | z, l) r(a | u, l)`, renormalized per `(z, u, l)`. The
    /// instrument and confounder interact, so the additive decomposition
    /// fails.
    #[allow(clippy::too_many_arguments)]
    pub fn multiplicative(
        l_levels: Vec<Vec<f64>>,
        u_levels: Vec<f64>,
        z_levels: Vec<Vec<f64>>,
        a_levels: Vec<f64>,
        p_l: Vec<f64>,
        p_u_given_l: Vec<Vec<f64>>,
        p_z_given_l: Vec<Vec<f64>>,
        q_a_given_zl: Vec<Vec<Vec<f64>>>,
        r_a_given_ul: Vec<Vec<Vec<f64>>>,
        y_of: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let nl = l_levels.len();
        let nz = z_levels.len();
        let nu = u_levels.len();
        let na = a_levels.len();
        let mut p_a_given_zul = vec![vec![vec![vec![0.0; na]; nu]; nz]; nl];
        for il in 0..nl {
            for iz in 0..nz {
                for iu in 0..nu {
                    let mut total = 0.0;
                    for ia in 0..na {
                        total += q_a_given_zl[il][iz][ia] * r_a_given_ul[il][iu][ia];
                    }
                    if total <= 0.0 {
                        return Err(Error::SpecError(
                            "multiplicative table has a zero-mass cell".into(),
                        ));
                    }
                    for ia in 0..na {
                        p_a_given_zul[il][iz][iu][ia] =
                            q_a_given_zl[il][iz][ia] * r_a_given_ul[il][iu][ia] / total;
                    }
                }
            }
        }
        let toy = DiscreteToy {
            l_levels,
            u_levels,
            z_levels,
            a_levels,
            p_l,
            p_u_given_l,
            p_z_given_l,
            p_a_given_zul,
            y_of,
        };
        toy.validate()?;
        Ok(toy)
    }

    pub fn validate(&self) -> Result<()> {
        let nl = self.l_levels.len();
        let nz = self.z_levels.len();
        let nu = self.u_levels.len();
        let na = self.a_levels.len();
        if nl == 0 || nz == 0 || nu == 0 || na == 0 {
            return Err(Error::SpecError("all supports must be nonempty".into()));
        }
        if !pmf_ok(&self.p_l) {
            return Err(Error::SpecError("P(L) does not sum to 1".into()));
        }
        for il in 0..nl {
            if !pmf_ok(&self.p_u_given_l[il]) {
                return Err(Error::SpecError(format!("P(U | L = {il}) does not sum to 1")));
            }
            if !pmf_ok(&self.p_z_given_l[il]) {
                return Err(Error::SpecError(format!("P(Z | L = {il}) does not sum to 1")));
            }
            for iz in 0..nz {
                for iu in 0..nu {
                    if !pmf_ok(&self.p_a_given_zul[il][iz][iu]) {
                        return Err(Error::SpecError(format!(
                            "P(A | z = {iz}, u = {iu}, l = {il}) does not sum to 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn find_a(&self, a: f64) -> usize {
        self.a_levels
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| {
                (*x - a).abs().partial_cmp(&(*y - a).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn find_l(&self, l: &[f64]) -> usize {
        self.l_levels
            .iter()
            .position(|lv| lv.len() == l.len() && lv.iter().zip(l).all(|(a, b)| (a - b).abs() < TOL))
            .unwrap_or(0)
    }

    // --- exact law ---

    /// `P(A = a | Z = z, L = l)`.
    pub fn p_a_given_zl(&self, il: usize, iz: usize, ia: usize) -> f64 {
        (0..self.u_levels.len())
            .map(|iu| self.p_u_given_l[il][iu] * self.p_a_given_zul[il][iz][iu][ia])
            .sum()
    }

    /// `P(A = a | U = u, L = l)`.
    pub fn p_a_given_ul(&self, il: usize, iu: usize, ia: usize) -> f64 {
        (0..self.z_levels.len())
            .map(|iz| self.p_z_given_l[il][iz] * self.p_a_given_zul[il][iz][iu][ia])
            .sum()
    }

    /// `P(A = a | L = l)`.
    pub fn p_a_given_l(&self, il: usize, ia: usize) -> f64 {
        (0..self.z_levels.len())
            .map(|iz| self.p_z_given_l[il][iz] * self.p_a_given_zl(il, iz, ia))
            .sum()
    }

    /// `P(A = a)`.
    pub fn p_a(&self, ia: usize) -> f64 {
        (0..self.l_levels.len())
            .map(|il| self.p_l[il] * self.p_a_given_l(il, ia))
            .sum()
    }

    /// True curve `theta(a) = E[Y(a)] = sum_{l,u} y(l, u, a) P(u, l)`.
    pub fn theta(&self, ia: usize) -> f64 {
        let mut acc = 0.0;
        for il in 0..self.l_levels.len() {
            for iu in 0..self.u_levels.len() {
                acc += self.p_l[il] * self.p_u_given_l[il][iu] * self.y_of[il][iu][ia];
            }
        }
        acc
    }

    fn pi_at(&self, pi: &WeightingFunction, il: usize, iz: usize) -> Result<f64> {
        pi.eval(&self.z_levels[iz], &self.l_levels[il])
    }

    /// `E[Z_pi | L = l]`.
    pub fn e_pi_given_l(&self, pi: &WeightingFunction, il: usize) -> Result<f64> {
        let mut acc = 0.0;
        for iz in 0..self.z_levels.len() {
            acc += self.p_z_given_l[il][iz] * self.pi_at(pi, il, iz)?;
        }
        Ok(acc)
    }

    /// `E[Z_pi | A = a, L = l]`.
    pub fn e_pi_given_al(&self, pi: &WeightingFunction, il: usize, ia: usize) -> Result<f64> {
        let mut acc = 0.0;
        for iz in 0..self.z_levels.len() {
            acc += self.p_z_given_l[il][iz]
                * self.p_a_given_zl(il, iz, ia)
                * self.pi_at(pi, il, iz)?;
        }
        Ok(acc / self.p_a_given_l(il, ia))
    }

    /// `E[Z_pi | A = a, U = u, L = l]`.
    pub fn e_pi_given_aul(
        &self,
        pi: &WeightingFunction,
        il: usize,
        iu: usize,
        ia: usize,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for iz in 0..self.z_levels.len() {
            acc += self.p_z_given_l[il][iz]
                * self.p_a_given_zul[il][iz][iu][ia]
                * self.pi_at(pi, il, iz)?;
        }
        Ok(acc / self.p_a_given_ul(il, iu, ia))
    }

    /// `E[Y | A = a, L = l]`.
    pub fn e_y_given_al(&self, il: usize, ia: usize) -> f64 {
        let mut acc = 0.0;
        for iz in 0..self.z_levels.len() {
            for iu in 0..self.u_levels.len() {
                acc += self.p_z_given_l[il][iz]
                    * self.p_u_given_l[il][iu]
                    * self.p_a_given_zul[il][iz][iu][ia]
                    * self.y_of[il][iu][ia];
            }
        }
        acc / self.p_a_given_l(il, ia)
    }

    /// `E[Y Z_pi | A = a, L = l]`.
    pub fn e_ypi_given_al(&self, pi: &WeightingFunction, il: usize, ia: usize) -> Result<f64> {
        let mut acc = 0.0;
        for iz in 0..self.z_levels.len() {
            for iu in 0..self.u_levels.len() {
                acc += self.p_z_given_l[il][iz]
                    * self.p_u_given_l[il][iu]
                    * self.p_a_given_zul[il][iz][iu][ia]
                    * self.y_of[il][iu][ia]
                    * self.pi_at(pi, il, iz)?;
            }
        }
        Ok(acc / self.p_a_given_l(il, ia))
    }

    /// The comparison weight of the equivalence characterization:
    /// `omega = [p(a|u,l)/p(a|l)] x [E(pi|a,u,l) - E(pi|l)] / [E(pi|a,l) - E(pi|l)]`.
    pub fn omega(
        &self,
        pi: &WeightingFunction,
        il: usize,
        iu: usize,
        ia: usize,
    ) -> Result<f64> {
        let rho = self.e_pi_given_l(pi, il)?;
        let num = self.e_pi_given_aul(pi, il, iu, ia)? - rho;
        let den = self.e_pi_given_al(pi, il, ia)? - rho;
        Ok(self.p_a_given_ul(il, iu, ia) / self.p_a_given_l(il, ia) * num / den)
    }

    /// `E[omega | L = l]`; equals one for every instance.
    pub fn omega_mean_given_l(
        &self,
        pi: &WeightingFunction,
        il: usize,
        ia: usize,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for iu in 0..self.u_levels.len() {
            acc += self.p_u_given_l[il][iu] * self.omega(pi, il, iu, ia)?;
        }
        Ok(acc)
    }

    /// Chi-square relevance at `(a, l)`: the variance of
    /// `p(a | Z, l) / p(a | l)` over the conditional law of `Z`.
    pub fn chi2_divergence(&self, il: usize, ia: usize) -> f64 {
        let pal = self.p_a_given_l(il, ia);
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for iz in 0..self.z_levels.len() {
            let r = self.p_a_given_zl(il, iz, ia) / pal;
            mean += self.p_z_given_l[il][iz] * r;
            mean_sq += self.p_z_given_l[il][iz] * r * r;
        }
        mean_sq - mean * mean
    }

    // --- exact estimator inputs ---

    /// Exact nuisance vector for a weighting function, via lookup tables.
    pub fn exact_nuisances(&self, pi: &WeightingFunction) -> Result<NuisanceVector> {
        let nl = self.l_levels.len();
        let na = self.a_levels.len();
        let mut rho_t = vec![0.0; nl];
        let mut kappa_t = vec![vec![0.0; na]; nl];
        let mut eta_t = vec![vec![0.0; na]; nl];
        let mut mu_t = vec![vec![0.0; na]; nl];
        let mut delta_t = vec![vec![0.0; na]; nl];
        for il in 0..nl {
            rho_t[il] = self.e_pi_given_l(pi, il)?;
            for ia in 0..na {
                let kappa = self.e_pi_given_al(pi, il, ia)? - rho_t[il];
                let eta = self.e_y_given_al(il, ia);
                kappa_t[il][ia] = kappa;
                eta_t[il][ia] = eta;
                mu_t[il][ia] = (self.e_ypi_given_al(pi, il, ia)? - eta * rho_t[il]) / kappa;
                delta_t[il][ia] = self.p_a(ia) / self.p_a_given_l(il, ia);
            }
        }
        let toy = Arc::new(self.clone());
        let lookup = move |toy: &DiscreteToy, a: f64, l: &[f64]| -> (usize, usize) {
            (toy.find_l(l), toy.find_a(a))
        };
        let mk = |table: Vec<Vec<f64>>| -> PointFn {
            let toy = Arc::clone(&toy);
            Arc::new(move |a, l| {
                let (il, ia) = lookup(&toy, a, l);
                table[il][ia]
            })
        };
        let rho_fn = {
            let toy = Arc::clone(&toy);
            Arc::new(move |l: &[f64]| rho_t[toy.find_l(l)])
        };
        Ok(NuisanceVector::exact(
            mk(mu_t),
            rho_fn,
            mk(kappa_t),
            mk(eta_t),
            mk(delta_t),
        ))
    }

    /// Exact degenerate nuisance set for a covariate-free instance.
    pub fn exact_degenerate(
        &self,
        pi: &WeightingFunction,
    ) -> Result<crate::nuisance::DegenerateNuisance> {
        if self.l_levels.len() != 1 || !self.l_levels[0].is_empty() {
            return Err(Error::Misuse(
                "degenerate nuisances need a covariate-free instance".into(),
            ));
        }
        let na = self.a_levels.len();
        let rho = self.e_pi_given_l(pi, 0)?;
        let mut mu_t = vec![0.0; na];
        let mut kappa_t = vec![0.0; na];
        let mut lambda_t = vec![0.0; na];
        for ia in 0..na {
            let kappa = self.e_pi_given_al(pi, 0, ia)? - rho;
            let lambda = self.e_y_given_al(0, ia);
            kappa_t[ia] = kappa;
            lambda_t[ia] = lambda;
            mu_t[ia] = (self.e_ypi_given_al(pi, 0, ia)? - rho * lambda) / kappa;
        }
        let toy = Arc::new(self.clone());
        let mk = |table: Vec<f64>| -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
            let toy = Arc::clone(&toy);
            Arc::new(move |a| table[toy.find_a(a)])
        };
        Ok(crate::nuisance::DegenerateNuisance::new(
            rho,
            mk(mu_t),
            mk(kappa_t),
            mk(lambda_t),
            1e-300,
        ))
    }

    /// Conditional probability of the treatment level, for the
    /// multi-categorical score.
    pub fn exact_propensity(&self) -> PointFn {
        let toy = Arc::new(self.clone());
        Arc::new(move |a, l| {
            let il = toy.find_l(l);
            let ia = toy.find_a(a);
            toy.p_a_given_l(il, ia)
        })
    }

    /// Population empirical measure over `(z_pi, l)` cells.
    pub fn population_emp(&self, pi: &WeightingFunction) -> Result<EmpiricalMeasure> {
        let mut z_pi = Vec::new();
        let mut l = Vec::new();
        let mut w = Vec::new();
        for il in 0..self.l_levels.len() {
            for iz in 0..self.z_levels.len() {
                let weight = self.p_l[il] * self.p_z_given_l[il][iz];
                if weight > 0.0 {
                    z_pi.push(self.pi_at(pi, il, iz)?);
                    l.push(self.l_levels[il].clone());
                    w.push(weight);
                }
            }
        }
        EmpiricalMeasure::from_weighted(z_pi, l, w)
    }

    /// Enumerates the conditional observed law given `A = a` as
    /// `(il, iz, iu, weight)` cells with weights summing to one.
    pub fn conditional_cells_given_a(&self, ia: usize) -> Vec<(usize, usize, usize, f64)> {
        let mut cells = Vec::new();
        let mut total = 0.0;
        for il in 0..self.l_levels.len() {
            for iz in 0..self.z_levels.len() {
                for iu in 0..self.u_levels.len() {
                    let w = self.p_l[il]
                        * self.p_z_given_l[il][iz]
                        * self.p_u_given_l[il][iu]
                        * self.p_a_given_zul[il][iz][iu][ia];
                    if w > 0.0 {
                        cells.push((il, iz, iu, w));
                        total += w;
                    }
                }
            }
        }
        for c in &mut cells {
            c.3 /= total;
        }
        cells
    }

    /// Outcome value of a cell.
    pub fn y_at(&self, il: usize, iu: usize, ia: usize) -> f64 {
        self.y_of[il][iu][ia]
    }

    /// Exact `E[score(O) | A = a]` over the enumerated conditional law.
    pub fn conditional_score_mean<F>(
        &self,
        pi: &WeightingFunction,
        ia: usize,
        score: F,
    ) -> Result<f64>
    where
        F: Fn(crate::scores::ScoreInput) -> f64,
    {
        let mut acc = 0.0;
        for (il, iz, iu, w) in self.conditional_cells_given_a(ia) {
            let o = crate::scores::ScoreInput {
                a: self.a_levels[ia],
                y: self.y_of[il][iu][ia],
                z_pi: self.pi_at(pi, il, iz)?,
                l: &self.l_levels[il],
            };
            acc += w * score(o);
        }
        Ok(acc)
    }

    /// Exact `E[score(O)]` over the full observed law.
    pub fn unconditional_score_mean<F>(&self, pi: &WeightingFunction, score: F) -> Result<f64>
    where
        F: Fn(crate::scores::ScoreInput) -> f64,
    {
        let mut acc = 0.0;
        for ia in 0..self.a_levels.len() {
            let pa = self.p_a(ia);
            if pa > 0.0 {
                acc += pa * self.conditional_score_mean(pi, ia, &score)?;
            }
        }
        Ok(acc)
    }

    /// Draws an i.i.d. sample from the joint law.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l_pick = WeightedIndex::new(&self.p_l).map_err(|e| Error::SpecError(e.to_string()))?;
        let mut obs = Vec::with_capacity(n);
        let mut us = Vec::with_capacity(n);
        for _ in 0..n {
            let il = l_pick.sample(&mut rng);
            let iu = WeightedIndex::new(&self.p_u_given_l[il])
                .map_err(|e| Error::SpecError(e.to_string()))?
                .sample(&mut rng);
            let iz = WeightedIndex::new(&self.p_z_given_l[il])
                .map_err(|e| Error::SpecError(e.to_string()))?
                .sample(&mut rng);
            let ia = WeightedIndex::new(&self.p_a_given_zul[il][iz][iu])
                .map_err(|e| Error::SpecError(e.to_string()))?
                .sample(&mut rng);
            obs.push(Observation {
                l: self.l_levels[il].clone(),
                z: self.z_levels[iz].clone(),
                a: self.a_levels[ia],
                y: self.y_of[il][iu][ia],
            });
            us.push(self.u_levels[iu]);
        }
        Dataset::from_observations(&obs)?.with_latent_u(us)
    }

    /// The full observed law as `(l, z, a, y, probability)` rows.
    pub fn observed_law(&self) -> Vec<(Vec<f64>, Vec<f64>, f64, f64, f64)> {
        let mut rows = Vec::new();
        for il in 0..self.l_levels.len() {
            for iz in 0..self.z_levels.len() {
                for iu in 0..self.u_levels.len() {
                    for ia in 0..self.a_levels.len() {
                        let p = self.p_l[il]
                            * self.p_z_given_l[il][iz]
                            * self.p_u_given_l[il][iu]
                            * self.p_a_given_zul[il][iz][iu][ia];
                        if p > 0.0 {
                            rows.push((
                                self.l_levels[il].clone(),
                                self.z_levels[iz].clone(),
                                self.a_levels[ia],
                                self.y_of[il][iu][ia],
                                p,
                            ));
                        }
                    }
                }
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::toys;

    #[test]
    fn uniform_everything_gives_flat_theta() {
        let toy = toys::flat_toy();
        let ey: f64 = (0..toy.a_levels.len())
            .map(|ia| toy.theta(ia) * toy.p_a(ia))
            .sum();
        for ia in 0..toy.a_levels.len() {
            assert!((toy.theta(ia) - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_tables_valid_and_omega_one() {
        let toy = toys::aiv_binary_ternary();
        toy.validate().unwrap();
        let pi = WeightingFunction::raw_coordinate(0);
        for il in 0..toy.l_levels.len() {
            for iu in 0..toy.u_levels.len() {
                for ia in 0..toy.a_levels.len() {
                    let w = toy.omega(&pi, il, iu, ia).unwrap();
                    assert!((w - 1.0).abs() < 1e-10, "omega = {w} at ({il},{iu},{ia})");
                }
            }
        }
    }

    #[test]
    fn multiplicative_tables_violate_omega() {
        let toy = toys::multiplicative_toy();
        toy.validate().unwrap();
        let pi = WeightingFunction::raw_coordinate(0);
        let mut max_dev: f64 = 0.0;
        for il in 0..toy.l_levels.len() {
            for iu in 0..toy.u_levels.len() {
                for ia in 0..toy.a_levels.len() {
                    let w = toy.omega(&pi, il, iu, ia).unwrap();
                    max_dev = max_dev.max((w - 1.0).abs());
                }
            }
        }
        assert!(max_dev > 1e-3, "max deviation {max_dev}");
    }

    #[test]
    fn omega_mean_is_always_one() {
        // the conditional mean identity holds even without additivity
        for toy in [toys::aiv_binary_ternary(), toys::multiplicative_toy()] {
            let pi = WeightingFunction::raw_coordinate(0);
            for il in 0..toy.l_levels.len() {
                for ia in 0..toy.a_levels.len() {
                    let m = toy.omega_mean_given_l(&pi, il, ia).unwrap();
                    assert!((m - 1.0).abs() < 1e-10, "mean omega {m}");
                }
            }
        }
    }

    #[test]
    fn degenerate_u_gives_omega_one() {
        let toy = toys::multiplicative_toy_constant_u();
        let pi = WeightingFunction::raw_coordinate(0);
        for il in 0..toy.l_levels.len() {
            for ia in 0..toy.a_levels.len() {
                let w = toy.omega(&pi, il, 0, ia).unwrap();
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_matches_support() {
        let toy = toys::aiv_binary_ternary();
        let data = toy.sample(500, 7).unwrap();
        assert_eq!(data.len(), 500);
        assert!(data.latent_u().is_some());
        for i in 0..data.len() {
            assert!(toy.a_levels.iter().any(|&a| (a - data.a()[i]).abs() < 1e-12));
        }
    }

    #[test]
    fn tables_not_summing_rejected() {
        let mut toy = toys::aiv_binary_ternary();
        toy.p_l[0] += 0.01;
        assert!(matches!(toy.validate(), Err(Error::SpecError(_))));
    }
}
