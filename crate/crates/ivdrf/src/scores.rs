//! Score functions whose conditional mean given the treatment identifies
//! the dose-response curve, plus naive alternatives for comparison.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::TargetInterval;
use crate::error::{Error, Result};
use crate::nuisance::{DegenerateNuisance, NuisanceVector};

/// Estimator variants a score vector can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    AipwIv,
    IpwIv,
    OrIv,
    AipwNuc,
    IpwNuc,
    OrNuc,
    DegenerateIv,
    MulticatIv,
}

impl EstimatorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorTag::AipwIv => "aipw_iv",
            EstimatorTag::IpwIv => "ipw_iv",
            EstimatorTag::OrIv => "or_iv",
            EstimatorTag::AipwNuc => "aipw_nuc",
            EstimatorTag::IpwNuc => "ipw_nuc",
            EstimatorTag::OrNuc => "or_nuc",
            EstimatorTag::DegenerateIv => "degenerate_iv",
            EstimatorTag::MulticatIv => "multicat_iv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "aipw_iv" | "aipw" => EstimatorTag::AipwIv,
            "ipw_iv" | "ipw" => EstimatorTag::IpwIv,
            "or_iv" | "or" => EstimatorTag::OrIv,
            "aipw_nuc" => EstimatorTag::AipwNuc,
            "ipw_nuc" => EstimatorTag::IpwNuc,
            "or_nuc" => EstimatorTag::OrNuc,
            "degenerate_iv" | "degenerate" => EstimatorTag::DegenerateIv,
            "multicat_iv" | "multicat" => EstimatorTag::MulticatIv,
            other => return Err(Error::Config(format!("unknown estimator tag '{other}'"))),
        })
    }
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One observation prepared for scoring: raw fields plus its `Z_pi` value.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a> {
    pub a: f64,
    pub y: f64,
    pub z_pi: f64,
    pub l: &'a [f64],
}

/// Weighted empirical measure over `(z_pi, l)` rows.
///
/// Equal weights reproduce a sample average; explicit weights let an exact
/// population law stand in during enumeration tests.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    z_pi: Vec<f64>,
    l: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Cached `rho(l)` per row, filled by [`EmpiricalMeasure::cache_rho`].
    rho: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn from_rows(z_pi: Vec<f64>, l: Vec<Vec<f64>>) -> Result<Self> {
        if z_pi.is_empty() || z_pi.len() != l.len() {
            return Err(Error::Misuse(
                "empirical measure needs matching, nonempty rows".into(),
            ));
        }
        let w = 1.0 / z_pi.len() as f64;
        let weights = vec![w; z_pi.len()];
        Ok(EmpiricalMeasure {
            z_pi,
            l,
            weights,
            rho: None,
        })
    }

    /// Population variant: explicit probabilities (must sum to one).
    pub fn from_weighted(z_pi: Vec<f64>, l: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if z_pi.is_empty() || z_pi.len() != l.len() || z_pi.len() != weights.len() {
            return Err(Error::Misuse(
                "weighted empirical measure needs matching, nonempty rows".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Misuse(format!(
                "empirical weights sum to {total}, expected 1"
            )));
        }
        Ok(EmpiricalMeasure {
            z_pi,
            l,
            weights,
            rho: None,
        })
    }

    pub fn len(&self) -> usize {
        self.z_pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_pi.is_empty()
    }

    /// Mean of `z_pi` under the measure.
    pub fn mean_zpi(&self) -> f64 {
        self.z_pi
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| z * w)
            .sum()
    }

    /// Precomputes `rho(l)` per row so repeated scoring skips the closure.
    pub fn cache_rho(&mut self, alpha: &NuisanceVector) {
        self.rho = Some(self.l.iter().map(|l| alpha.rho(l)).collect());
    }

    fn rho_at(&self, alpha: &NuisanceVector, j: usize) -> f64 {
        match &self.rho {
            Some(r) => r[j],
            None => alpha.rho(&self.l[j]),
        }
    }
}

/// One pass over the empirical measure at a fixed treatment value: the
/// augmented integral term, the plain outcome-regression average, and the
/// confounding-free average, so multi-estimator scoring reuses the loop.
pub struct EmpAggregates {
    /// `mean[mu(a, l) - (z_pi - rho(l)) (eta(a, l) - mu(a, l)) / kappa(a, l)]`
    pub aipw_integral: f64,
    /// `mean mu(a, l)`
    pub mu_bar: f64,
    /// `mean eta(a, l)`
    pub eta_bar: f64,
}

pub fn emp_aggregates(a: f64, alpha: &NuisanceVector, emp: &EmpiricalMeasure) -> EmpAggregates {
    let mut aipw_integral = 0.0;
    let mut mu_bar = 0.0;
    let mut eta_bar = 0.0;
    for j in 0..emp.len() {
        let l = emp.l[j].as_slice();
        let mu = alpha.mu(a, l);
        let eta = alpha.eta(a, l);
        let kappa = alpha.kappa(a, l);
        let rho = emp.rho_at(alpha, j);
        let w = emp.weights[j];
        aipw_integral += w * (mu - (emp.z_pi[j] - rho) * (eta - mu) / kappa);
        mu_bar += w * mu;
        eta_bar += w * eta;
    }
    EmpAggregates {
        aipw_integral,
        mu_bar,
        eta_bar,
    }
}

/// Augmented inverse probability weighting score.
///
/// `delta (Z_pi - rho) / kappa (Y - mu)` plus the empirical average of
/// `mu(A, l) - (z_pi - rho(l)) (eta(A, l) - mu(A, l)) / kappa(A, l)`.
pub fn aipw_score(o: ScoreInput, alpha: &NuisanceVector, emp: &EmpiricalMeasure) -> f64 {
    aipw_residual(o, alpha) + emp_aggregates(o.a, alpha, emp).aipw_integral
}

/// The first (residual) term of the augmented score.
pub fn aipw_residual(o: ScoreInput, alpha: &NuisanceVector) -> f64 {
    alpha.delta(o.a, o.l) * (o.z_pi - alpha.rho(o.l)) / alpha.kappa(o.a, o.l)
        * (o.y - alpha.mu(o.a, o.l))
}

/// Inverse probability weighting score `delta (Z_pi - rho) Y / kappa`.
pub fn ipw_score(o: ScoreInput, alpha: &NuisanceVector) -> f64 {
    alpha.delta(o.a, o.l) * (o.z_pi - alpha.rho(o.l)) * o.y / alpha.kappa(o.a, o.l)
}

/// Outcome regression score: the empirical average of `mu(A, l)`.
pub fn or_score(o: ScoreInput, alpha: &NuisanceVector, emp: &EmpiricalMeasure) -> f64 {
    let mut acc = 0.0;
    for j in 0..emp.len() {
        acc += emp.weights[j] * alpha.mu(o.a, &emp.l[j]);
    }
    acc
}

/// The no-unmeasured-confounding counterparts `(aipw, ipw, or)`.
pub fn nuc_scores(o: ScoreInput, alpha: &NuisanceVector, emp: &EmpiricalMeasure) -> (f64, f64, f64) {
    let delta = alpha.delta(o.a, o.l);
    let mut eta_bar = 0.0;
    for j in 0..emp.len() {
        eta_bar += emp.weights[j] * alpha.eta(o.a, &emp.l[j]);
    }
    let aipw = delta * (o.y - alpha.eta(o.a, o.l)) + eta_bar;
    let ipw = delta * o.y;
    (aipw, ipw, eta_bar)
}

/// Degenerate score for covariate-free data.
pub fn degenerate_score(o: ScoreInput, alpha: &DegenerateNuisance, emp: &EmpiricalMeasure) -> Result<f64> {
    if !o.l.is_empty() {
        return Err(Error::Misuse(
            "degenerate score applies only to covariate-free data".into(),
        ));
    }
    let kappa = alpha.kappa(o.a);
    let mu = alpha.mu(o.a);
    Ok((o.z_pi - alpha.rho) * (o.y - mu) / kappa + mu
        - (emp.mean_zpi() - alpha.rho) * (alpha.lambda(o.a) - mu) / kappa)
}

/// Score for a multi-categorical treatment at a target level, with the
/// estimand term dropped (the estimator is the sample mean of these values).
///
/// `Delta(a, l)` is the conditional probability of the target level.
pub fn multicat_score(
    o: ScoreInput,
    alpha: &NuisanceVector,
    a_target: f64,
    delta_fn: &dyn Fn(f64, &[f64]) -> f64,
) -> Result<f64> {
    let mut value = 0.0;
    if o.a == a_target {
        let d = delta_fn(o.a, o.l);
        if !(d > 1e-12 && d <= 1.0) {
            return Err(Error::Propensity(d));
        }
        value += (o.z_pi - alpha.rho(o.l)) / alpha.kappa(o.a, o.l) * (o.y - alpha.mu(o.a, o.l)) / d;
    }
    let mu_t = alpha.mu(a_target, o.l);
    value += mu_t
        - (o.z_pi - alpha.rho(o.l)) * (alpha.eta(a_target, o.l) - mu_t)
            / alpha.kappa(a_target, o.l);
    Ok(value)
}

/// Per-observation score values with fold provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub tag: EstimatorTag,
    pub values: Vec<f64>,
    /// Fold that scored each observation.
    pub fold: Vec<u32>,
    /// Identifier of the weighting function in effect.
    pub weighting_id: String,
}

impl ScoreVector {
    pub fn new(tag: EstimatorTag, values: Vec<f64>, fold: Vec<u32>, weighting_id: String) -> Result<Self> {
        if values.len() != fold.len() {
            return Err(Error::Misuse("score and fold lengths differ".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "score vector '{tag}' contains non-finite values"
            )));
        }
        Ok(ScoreVector {
            tag,
            values,
            fold,
            weighting_id,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Long-format CSV: `index,fold,tag,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,fold,tag,value")?;
        for (i, (v, k)) in self.values.iter().zip(&self.fold).enumerate() {
            writeln!(w, "{i},{k},{},{v}", self.tag)?;
        }
        Ok(())
    }
}

/// Reweighted average estimand: `mean q(A_i) phi_i`.
///
/// The support of `q` must sit inside the interval the weighting function
/// was validated on.
pub struct QFunction {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    support: Option<(f64, f64)>,
    pub id: String,
}

impl QFunction {
    /// `q = 1`: the average of the curve over the treatment distribution.
    pub fn constant() -> Self {
        QFunction {
            f: Arc::new(|_| 1.0),
            support: None,
            id: "const".into(),
        }
    }

    /// Indicator of the interval divided by the empirical mass inside it.
    pub fn localized(interval: TargetInterval, a: &[f64]) -> Self {
        let mass = a.iter().filter(|&&v| interval.contains(v)).count() as f64 / a.len() as f64;
        QFunction {
            f: Arc::new(move |v| {
                if interval.contains(v) {
                    1.0 / mass
                } else {
                    0.0
                }
            }),
            support: Some((interval.lo, interval.hi)),
            id: format!("localized[{},{}]", interval.lo, interval.hi),
        }
    }

    pub fn custom(
        id: impl Into<String>,
        support: Option<(f64, f64)>,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Self {
        QFunction {
            f,
            support,
            id: id.into(),
        }
    }

    pub fn eval(&self, a: f64) -> f64 {
        (self.f)(a)
    }
}

/// Estimates `psi_q = E[q(A) phi]` from cross-fitted scores.
pub fn estimate_psi_q(
    scores: &ScoreVector,
    a: &[f64],
    q: &QFunction,
    validated: Option<&TargetInterval>,
) -> Result<f64> {
    if scores.len() != a.len() {
        return Err(Error::Misuse("scores and treatments must align".into()));
    }
    if let (Some((lo, hi)), Some(iv)) = (q.support, validated) {
        if lo < iv.lo || hi > iv.hi {
            return Err(Error::Misuse(format!(
                "q support [{lo}, {hi}] extends beyond the validated interval [{}, {}]",
                iv.lo, iv.hi
            )));
        }
    }
    let n = a.len() as f64;
    Ok(scores
        .values
        .iter()
        .zip(a)
        .map(|(phi, &ai)| q.eval(ai) * phi)
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::PointFn;

    fn exact_nv(
        mu: f64,
        rho: f64,
        kappa: f64,
        eta: f64,
        delta: f64,
    ) -> NuisanceVector {
        let mk = |v: f64| -> PointFn { Arc::new(move |_, _| v) };
        NuisanceVector::exact(
            mk(mu),
            Arc::new(move |_| rho),
            mk(kappa),
            mk(eta),
            mk(delta),
        )
    }

    #[test]
    fn residuals_vanish_when_outcome_matches_mu() {
        // Y = mu(A, L) and eta = mu: score reduces to the empirical mean of mu
        let nv = exact_nv(1.5, 0.2, 0.7, 1.5, 1.0);
        let emp =
            EmpiricalMeasure::from_rows(vec![0.4, 0.1], vec![vec![0.0], vec![1.0]]).unwrap();
        let o = ScoreInput {
            a: 0.5,
            y: 1.5,
            z_pi: 0.9,
            l: &[0.3],
        };
        let s = aipw_score(o, &nv, &emp);
        assert!((s - 1.5).abs() < 1e-12);
    }

    #[test]
    fn centered_instrument_single_row_emp() {
        let nv = exact_nv(2.0, 0.25, 0.5, 3.0, 1.0);
        let emp = EmpiricalMeasure::from_rows(vec![0.25], vec![vec![0.1]]).unwrap();
        // Z_pi equals rho so both correction terms vanish
        let o = ScoreInput {
            a: 0.5,
            y: 7.0,
            z_pi: 0.25,
            l: &[0.1],
        };
        let s = aipw_score(o, &nv, &emp);
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ipw_zero_outcome_and_or_constant_mu() {
        let nv = exact_nv(4.0, 0.2, 0.6, 0.0, 1.3);
        let o = ScoreInput {
            a: 0.5,
            y: 0.0,
            z_pi: 0.8,
            l: &[0.0],
        };
        assert_eq!(ipw_score(o, &nv), 0.0);
        let emp = EmpiricalMeasure::from_rows(vec![0.3], vec![vec![0.2]]).unwrap();
        assert!((or_score(o, &nv, &emp) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nuc_aipw_equals_or_when_outcome_matches_eta() {
        let nv = exact_nv(0.0, 0.0, 1.0, 2.5, 1.7);
        let emp = EmpiricalMeasure::from_rows(vec![0.0, 0.0], vec![vec![0.1], vec![0.4]]).unwrap();
        let o = ScoreInput {
            a: 0.2,
            y: 2.5,
            z_pi: 0.0,
            l: &[0.3],
        };
        let (aipw, ipw, or) = nuc_scores(o, &nv, &emp);
        assert!((aipw - or).abs() < 1e-12);
        assert!((ipw - 1.7 * 2.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_score_rejects_covariates() {
        let dn = DegenerateNuisance::new(
            0.0,
            Arc::new(|_| 0.0),
            Arc::new(|_| 1.0),
            Arc::new(|_| 0.0),
            1e-9,
        );
        let emp = EmpiricalMeasure::from_rows(vec![0.0], vec![vec![]]).unwrap();
        let o = ScoreInput {
            a: 0.1,
            y: 0.0,
            z_pi: 0.0,
            l: &[1.0],
        };
        assert!(degenerate_score(o, &dn, &emp).is_err());
    }

    #[test]
    fn multicat_indicator_off_path() {
        let nv = exact_nv(1.0, 0.5, 0.4, 2.0, 1.0);
        let o = ScoreInput {
            a: 2.0,
            y: 9.0,
            z_pi: 0.9,
            l: &[0.0],
        };
        let s = multicat_score(o, &nv, 1.0, &|_, _| 0.5).unwrap();
        // first term off; value = mu - (z - rho)(eta - mu)/kappa
        let expect = 1.0 - (0.9 - 0.5) * (2.0 - 1.0) / 0.4;
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn multicat_centered_instrument() {
        let nv = exact_nv(1.25, 0.5, 0.4, 2.0, 1.0);
        let o = ScoreInput {
            a: 1.0,
            y: 1.25,
            z_pi: 0.5,
            l: &[0.0],
        };
        let s = multicat_score(o, &nv, 1.0, &|_, _| 0.5).unwrap();
        assert!((s - 1.25).abs() < 1e-12);
    }

    #[test]
    fn psi_q_constant_is_score_mean() {
        let sv = ScoreVector::new(
            EstimatorTag::AipwIv,
            vec![1.0, 2.0, 3.0],
            vec![0, 0, 1],
            "t".into(),
        )
        .unwrap();
        let a = vec![0.1, 0.2, 0.3];
        let psi = estimate_psi_q(&sv, &a, &QFunction::constant(), None).unwrap();
        assert!((psi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn psi_q_localized_equals_in_window_mean() {
        let sv = ScoreVector::new(
            EstimatorTag::AipwIv,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0; 4],
            "t".into(),
        )
        .unwrap();
        let a = vec![0.1, 0.4, 0.6, 0.9];
        let iv = TargetInterval::new(0.3, 0.7).unwrap();
        let psi = estimate_psi_q(&sv, &a, &QFunction::localized(iv, &a), None).unwrap();
        // in-window scores: 2, 3; mass 0.5 -> mean (2 + 3)/4 / 0.5 = 2.5
        assert!((psi - 2.5).abs() < 1e-12);
    }

    #[test]
    fn psi_q_support_check() {
        let sv =
            ScoreVector::new(EstimatorTag::AipwIv, vec![1.0], vec![0], "t".into()).unwrap();
        let a = vec![0.5];
        let wide = TargetInterval::new(0.0, 1.0).unwrap();
        let narrow = TargetInterval::new(0.4, 0.6).unwrap();
        let q = QFunction::localized(wide, &a);
        assert!(estimate_psi_q(&sv, &a, &q, Some(&narrow)).is_err());
    }

    #[test]
    fn score_csv_format() {
        let sv = ScoreVector::new(
            EstimatorTag::IpwIv,
            vec![1.5, -0.25],
            vec![0, 1],
            "t".into(),
        )
        .unwrap();
        let mut buf = Vec::new();
        sv.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "index,fold,tag,value\n0,0,ipw_iv,1.5\n1,1,ipw_iv,-0.25\n");
    }
}
