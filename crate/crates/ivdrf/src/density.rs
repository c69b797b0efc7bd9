//! Kernel density estimators: a marginal estimator for the treatment and a
//! product-kernel conditional estimator `p(a | x)`.
//!
//! Both use Gaussian kernels with rule-of-thumb bandwidths per coordinate,
//! scaled by a configurable multiplier. Constant covariate coordinates are
//! ignored (their kernel weight is one for every query).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SQRT_2PI: f64 = 2.5066282746310002;

fn silverman<F: Scalar>(values: &[F]) -> F {
    let n = values.len();
    if n < 2 {
        return F::zero();
    }
    let nf = F::from_count(n);
    let mean = values.iter().copied().sum::<F>() / nf;
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<F>()
        / (nf - F::one());
    let sd = var.sqrt();
    let mut sorted: Vec<F> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> F {
        let idx = p * (n as f64 - 1.0);
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let frac = F::c(idx - lo as f64);
        sorted[lo] * (F::one() - frac) + sorted[hi] * frac
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > F::zero() {
        sd.min(iqr / F::c(1.34))
    } else {
        sd
    };
    F::c(1.06) * spread * F::c((n as f64).powf(-0.2))
}

/// Marginal Gaussian kernel density estimator.
#[derive(Debug, Clone)]
pub struct Kde1d<F> {
    points: Vec<F>,
    bandwidth: F,
}

impl<F: Scalar> Kde1d<F> {
    pub fn fit(values: &[F], bandwidth_multiplier: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientData("marginal KDE needs at least 2 points".into()));
        }
        let bw = silverman(values) * F::c(bandwidth_multiplier);
        if bw <= F::zero() {
            return Err(Error::InsufficientData("degenerate sample for marginal KDE".into()));
        }
        Ok(Kde1d {
            points: values.to_vec(),
            bandwidth: bw,
        })
    }

    pub fn bandwidth(&self) -> F {
        self.bandwidth
    }

    pub fn pdf(&self, a: F) -> F {
        let b = self.bandwidth;
        let norm = F::c(1.0 / SQRT_2PI) / b / F::from_count(self.points.len());
        let mut acc = F::zero();
        for &p in &self.points {
            let t = (p - a) / b;
            acc = acc + (-t * t * F::c(0.5)).exp();
        }
        acc * norm
    }
}

/// Product-kernel conditional density estimator
/// `p(a | x) = sum_i K_b(A_i - a) W_c(X_i - x) / sum_i W_c(X_i - x)`.
#[derive(Debug, Clone)]
pub struct CondKde<F> {
    response: Vec<F>,
    /// Row-major `n x dim` covariates.
    covariates: Vec<F>,
    dim: usize,
    response_bandwidth: F,
    /// One bandwidth per covariate; `None` marks a constant coordinate.
    covariate_bandwidths: Vec<Option<F>>,
}

impl<F: Scalar> CondKde<F> {
    /// Fits bandwidths by the rule of thumb times `bandwidth_multiplier`.
    pub fn fit(
        response: &[F],
        covariates: &[F],
        dim: usize,
        bandwidth_multiplier: f64,
    ) -> Result<Self> {
        let n = response.len();
        if n < 2 {
            return Err(Error::InsufficientData(
                "conditional KDE needs at least 2 points".into(),
            ));
        }
        if covariates.len() != n * dim {
            return Err(Error::Misuse(format!(
                "covariate shape {} does not match n x dim = {n} x {dim}",
                covariates.len()
            )));
        }
        let b = silverman(response) * F::c(bandwidth_multiplier);
        if b <= F::zero() {
            return Err(Error::InsufficientData("degenerate response sample".into()));
        }
        let mut cbw = Vec::with_capacity(dim);
        for j in 0..dim {
            let col: Vec<F> = (0..n).map(|i| covariates[i * dim + j]).collect();
            let s = silverman(&col) * F::c(bandwidth_multiplier);
            cbw.push(if s > F::zero() { Some(s) } else { None });
        }
        Ok(CondKde {
            response: response.to_vec(),
            covariates: covariates.to_vec(),
            dim,
            response_bandwidth: b,
            covariate_bandwidths: cbw,
        })
    }

    pub fn response_bandwidth(&self) -> F {
        self.response_bandwidth
    }

    pub fn covariate_bandwidths(&self) -> &[Option<F>] {
        &self.covariate_bandwidths
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    fn weight(&self, i: usize, x: &[F]) -> F {
        let mut log_w = F::zero();
        for j in 0..self.dim {
            if let Some(b) = self.covariate_bandwidths[j] {
                let t = (self.covariates[i * self.dim + j] - x[j]) / b;
                log_w = log_w - t * t * F::c(0.5);
            }
        }
        log_w.exp()
    }

    /// Conditional density at `(a, x)`; errors when the covariate weight
    /// mass underflows (query far outside the training support).
    pub fn pdf(&self, a: F, x: &[F]) -> Result<F> {
        if x.len() != self.dim {
            return Err(Error::Misuse(format!(
                "query dimension {} does not match training dimension {}",
                x.len(),
                self.dim
            )));
        }
        let b = self.response_bandwidth;
        let mut num = F::zero();
        let mut den = F::zero();
        for i in 0..self.response.len() {
            let w = self.weight(i, x);
            den = den + w;
            let t = (self.response[i] - a) / b;
            num = num + w * (-t * t * F::c(0.5)).exp();
        }
        if den < F::c(1e-12) {
            return Err(Error::LowDensity {
                denominator: den.to_f64().unwrap_or(0.0),
            });
        }
        Ok(num / den / b * F::c(1.0 / SQRT_2PI))
    }

    /// Like [`CondKde::pdf`] but maps low-density queries to zero.
    pub fn pdf_or_zero(&self, a: F, x: &[F]) -> F {
        self.pdf(a, x).unwrap_or_else(|_| F::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn marginal_kde_close_to_uniform_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample: Vec<f64> = (0..4000).map(|_| rng.gen::<f64>()).collect();
        let kde = Kde1d::fit(&sample, 1.0).unwrap();
        for &a in &[0.3, 0.5, 0.7] {
            assert!((kde.pdf(a) - 1.0).abs() < 0.1, "pdf({a}) = {}", kde.pdf(a));
        }
    }

    #[test]
    fn conditional_kde_ignores_independent_covariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3000usize;
        let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let kde = CondKde::fit(&a, &x, 1, 1.0).unwrap();
        let marginal = Kde1d::fit(&a, 1.0).unwrap();
        for &aa in &[0.3, 0.5, 0.7] {
            for &xx in &[-0.5, 0.0, 0.5] {
                let c = kde.pdf(aa, &[xx]).unwrap();
                assert!(
                    (c - marginal.pdf(aa)).abs() < 0.1,
                    "p({aa}|{xx}) = {c} vs marginal {}",
                    marginal.pdf(aa)
                );
            }
        }
    }

    #[test]
    fn normalization_over_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 500usize;
        let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let x: Vec<f64> = (0..n).map(|i| a[i] * 0.5 + 0.2 * rng.gen::<f64>()).collect();
        let kde = CondKde::fit(&a, &x, 1, 1.0).unwrap();
        // trapezoid over a wide grid: Gaussian kernels integrate to one
        let grid: Vec<f64> = (0..801).map(|i| -1.0 + 3.0 * i as f64 / 800.0).collect();
        let mut integral = 0.0;
        for w in grid.windows(2) {
            let f0 = kde.pdf(w[0], &[0.4]).unwrap();
            let f1 = kde.pdf(w[1], &[0.4]).unwrap();
            integral += 0.5 * (f0 + f1) * (w[1] - w[0]);
        }
        assert!((0.95..=1.05).contains(&integral), "integral {integral}");
    }

    #[test]
    fn mass_concentrates_as_covariate_bandwidth_shrinks() {
        // evaluating exactly at a training covariate, smaller bandwidths
        // concentrate mass at that row's response
        let a = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let x = vec![-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let mut previous = 0.0;
        for mult in [1.0, 0.5, 0.25] {
            let kde = CondKde::fit(&a, &x, 1, mult).unwrap();
            let at_one = kde.pdf(1.0, &[1.0]).unwrap();
            let at_zero = kde.pdf(0.0, &[1.0]).unwrap();
            let ratio = at_one / at_zero;
            assert!(ratio > previous, "ratio {ratio} at mult {mult}");
            previous = ratio;
        }
    }

    #[test]
    fn low_density_detected_far_from_support() {
        let a = vec![0.0, 0.1, 0.2, 0.3, 0.4];
        let x = vec![0.0, 0.1, 0.2, 0.3, 0.4];
        let kde = CondKde::fit(&a, &x, 1, 1.0).unwrap();
        let err = kde.pdf(0.2, &[1e6]).unwrap_err();
        assert!(matches!(err, Error::LowDensity { .. }));
    }

    #[test]
    fn constant_covariate_behaves_as_marginal() {
        let a: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let x: Vec<f64> = vec![3.0; 200];
        let kde = CondKde::fit(&a, &x, 1, 1.0).unwrap();
        let marginal = Kde1d::fit(&a, 1.0).unwrap();
        let got = kde.pdf(0.5, &[3.0]).unwrap();
        assert!((got - marginal.pdf(0.5)).abs() < 1e-12);
    }
}
