//! Natural cubic spline bases and penalized tensor-product regression.

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Natural cubic spline basis on a fixed knot sequence.
///
/// With knots `k_1 < ... < k_K` the basis is `{1, x, N_3, ..., N_K}`
/// (truncated-power construction, linear beyond the boundary knots). A
/// degenerate coordinate collapses to the constant basis `{1}`.
#[derive(Debug, Clone)]
pub struct SplineBasis<F> {
    knots: Vec<F>,
}

impl<F: Scalar> SplineBasis<F> {
    /// Basis with `df + 1` knots at equally spaced quantiles of `values`.
    /// Duplicate quantiles collapse, so discrete inputs get one knot per
    /// distinct level.
    pub fn from_quantiles(values: &[F], df: usize) -> Self {
        let mut sorted: Vec<F> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.is_empty() {
            return SplineBasis { knots: vec![] };
        }
        let k = df.max(1) + 1;
        let n = sorted.len();
        let mut knots = Vec::with_capacity(k);
        for j in 0..k {
            // nearest-rank quantiles keep knots on observed values, so
            // discrete inputs dedup to one knot per level
            let q = j as f64 / (k - 1) as f64;
            let idx = (q * (n as f64 - 1.0)).round() as usize;
            knots.push(sorted[idx.min(n - 1)]);
        }
        knots.dedup_by(|a, b| *a == *b);
        if knots.len() < 2 {
            knots.truncate(0); // constant coordinate
        }
        SplineBasis { knots }
    }

    pub fn from_knots(mut knots: Vec<F>) -> Self {
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup_by(|a, b| *a == *b);
        if knots.len() < 2 {
            knots.truncate(0);
        }
        SplineBasis { knots }
    }

    /// Number of basis functions.
    pub fn size(&self) -> usize {
        if self.knots.is_empty() {
            1
        } else {
            self.knots.len()
        }
    }

    pub fn knots(&self) -> &[F] {
        &self.knots
    }

    pub fn eval_into(&self, x: F, out: &mut [F]) {
        debug_assert_eq!(out.len(), self.size());
        out[0] = F::one();
        if self.knots.is_empty() {
            return;
        }
        out[1] = x;
        let kk = self.knots.len();
        if kk == 2 {
            return;
        }
        let last = self.knots[kk - 1];
        let before_last = self.knots[kk - 2];
        let cube = |v: F| -> F {
            if v > F::zero() {
                v * v * v
            } else {
                F::zero()
            }
        };
        let d = |knot: F| -> F { (cube(x - knot) - cube(x - last)) / (last - knot) };
        let d_ref = d(before_last);
        for (j, &knot) in self.knots[..kk - 2].iter().enumerate() {
            out[j + 2] = d(knot) - d_ref;
        }
    }

    pub fn eval(&self, x: F) -> Vec<F> {
        let mut out = vec![F::zero(); self.size()];
        self.eval_into(x, &mut out);
        out
    }
}

/// Ridge-strength choice for a penalized fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeSelect {
    /// Fixed penalty relative to `n`.
    Fixed(f64),
    /// Generalized cross-validation over a log-spaced grid.
    Gcv { grid: Vec<f64> },
}

impl RidgeSelect {
    pub fn default_gcv() -> Self {
        RidgeSelect::Gcv {
            grid: vec![1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

/// Configuration for a penalized tensor-spline fit.
#[derive(Debug, Clone)]
pub struct SplineFitConfig {
    /// Degrees of freedom per coordinate (cycled if shorter than the
    /// coordinate count).
    pub df: Vec<usize>,
    /// Ridge penalty on non-constant coefficients.
    pub ridge: RidgeSelect,
}

impl Default for SplineFitConfig {
    fn default() -> Self {
        SplineFitConfig {
            df: vec![5],
            ridge: RidgeSelect::Fixed(1e-6),
        }
    }
}

#[derive(Debug, Clone)]
struct Coord<F> {
    offset: F,
    scale: F,
    basis: SplineBasis<F>,
}

/// Ridge-penalized least squares on a tensor product of natural spline
/// bases, one basis per input coordinate. Coordinates are standardized to
/// [0, 1] before basis construction. With zero input coordinates this is an
/// intercept-only fit.
#[derive(Debug, Clone)]
pub struct PenalizedSpline<F> {
    coords: Vec<Coord<F>>,
    coef: Vec<F>,
}

impl<F: Scalar> PenalizedSpline<F> {
    /// Fits responses `y` against row-major predictors `x` (`n x dim`).
    pub fn fit(x: &[F], dim: usize, y: &[F], cfg: &SplineFitConfig) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InsufficientData("no rows for spline fit".into()));
        }
        if x.len() != n * dim {
            return Err(Error::Misuse(format!(
                "predictor shape {} does not match n x dim = {} x {}",
                x.len(),
                n,
                dim
            )));
        }
        let mut coords = Vec::with_capacity(dim);
        for j in 0..dim {
            let col: Vec<F> = (0..n).map(|i| x[i * dim + j]).collect();
            let lo = col.iter().copied().fold(F::infinity(), F::min);
            let hi = col.iter().copied().fold(F::neg_infinity(), F::max);
            let range = hi - lo;
            let (offset, scale) = if range > F::c(1e-12) {
                (lo, range)
            } else {
                (lo, F::one()) // constant coordinate
            };
            let std_col: Vec<F> = col.iter().map(|&v| (v - offset) / scale).collect();
            let df = cfg.df[j.min(cfg.df.len() - 1)];
            let basis = SplineBasis::from_quantiles(&std_col, df);
            coords.push(Coord {
                offset,
                scale,
                basis,
            });
        }
        let p: usize = coords.iter().map(|c| c.basis.size()).product::<usize>().max(1);
        if n < p {
            return Err(Error::InsufficientData(format!(
                "{n} rows cannot support a {p}-column tensor basis"
            )));
        }

        // design matrix, normal equations, and response projection
        let mut design = vec![F::zero(); n * p];
        let mut gram0 = vec![F::zero(); p * p];
        let mut rhs0 = vec![F::zero(); p];
        let mut scratch: Vec<Vec<F>> = coords
            .iter()
            .map(|c| vec![F::zero(); c.basis.size()])
            .collect();
        for i in 0..n {
            let row = &mut design[i * p..(i + 1) * p];
            design_row_into(&coords, &x[i * dim..(i + 1) * dim], &mut scratch, row);
            for r in 0..p {
                let wr = row[r];
                if wr == F::zero() {
                    continue;
                }
                rhs0[r] = rhs0[r] + wr * y[i];
                for c in r..p {
                    gram0[r * p + c] = gram0[r * p + c] + wr * row[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                gram0[r * p + c] = gram0[c * p + r];
            }
        }

        let solve_for = |ridge: f64| -> Result<Vec<F>> {
            let mut gram = gram0.clone();
            let lambda = F::c(ridge) * F::from_count(n);
            for d in 1..p {
                gram[d * p + d] = gram[d * p + d] + lambda;
            }
            linalg::cholesky_in_place(&mut gram, p)
                .map_err(|e| Error::Conditioning(format!("penalized normal matrix: {e}")))?;
            let mut coef = rhs0.clone();
            linalg::cholesky_solve(&gram, p, &mut coef);
            Ok(coef)
        };

        let coef = match &cfg.ridge {
            RidgeSelect::Fixed(ridge) => solve_for(*ridge)?,
            RidgeSelect::Gcv { grid } => {
                // GCV(lambda) = (rss / n) / (1 - tr(H) / n)^2 with the trace
                // from forward solves of the factored normal matrix
                let mut best: Option<(f64, Vec<F>)> = None;
                for &ridge in grid {
                    let mut gram = gram0.clone();
                    let lambda = F::c(ridge) * F::from_count(n);
                    for d in 1..p {
                        gram[d * p + d] = gram[d * p + d] + lambda;
                    }
                    if linalg::cholesky_in_place(&mut gram, p).is_err() {
                        continue;
                    }
                    let mut coef = rhs0.clone();
                    linalg::cholesky_solve(&gram, p, &mut coef);
                    let mut rss = F::zero();
                    let mut trace = F::zero();
                    let mut fwd = vec![F::zero(); p];
                    for i in 0..n {
                        let row = &design[i * p..(i + 1) * p];
                        let mut fit = F::zero();
                        for r in 0..p {
                            fit = fit + row[r] * coef[r];
                        }
                        let resid = y[i] - fit;
                        rss = rss + resid * resid;
                        // leverage_i = row^T G^{-1} row = || L^{-1} row ||^2
                        for r in 0..p {
                            let mut s = row[r];
                            for k in 0..r {
                                s = s - gram[r * p + k] * fwd[k];
                            }
                            fwd[r] = s / gram[r * p + r];
                            trace = trace + fwd[r] * fwd[r];
                        }
                    }
                    let nf = F::from_count(n);
                    let denom = F::one() - trace / nf;
                    if denom <= F::zero() {
                        continue;
                    }
                    let gcv = (rss / nf) / (denom * denom);
                    let gcv = gcv.to_f64().unwrap_or(f64::INFINITY);
                    match &best {
                        Some((b, _)) if gcv >= *b => {}
                        _ => best = Some((gcv, coef)),
                    }
                }
                match best {
                    Some((_, coef)) => coef,
                    None => solve_for(1e-4)?, // every grid value degenerate
                }
            }
        };
        Ok(PenalizedSpline { coords, coef })
    }

    pub fn basis_size(&self) -> usize {
        self.coef.len()
    }

    pub fn coefficients(&self) -> &[F] {
        &self.coef
    }

    /// Tensor design row at `x`; exposed so external solvers can reproduce
    /// the fit.
    pub fn design_row(&self, x: &[F]) -> Vec<F> {
        let mut scratch: Vec<Vec<F>> = self
            .coords
            .iter()
            .map(|c| vec![F::zero(); c.basis.size()])
            .collect();
        let mut row = vec![F::zero(); self.coef.len()];
        design_row_into(&self.coords, x, &mut scratch, &mut row);
        row
    }

    pub fn predict(&self, x: &[F]) -> F {
        debug_assert_eq!(x.len(), self.coords.len());
        // prediction sits on the scoring hot path; keep it allocation-free
        const STACK: usize = 16;
        let mut buf = [F::zero(); STACK];
        match self.coords.len() {
            0 => self.coef[0],
            1 => {
                let c = &self.coords[0];
                let xs = (x[0] - c.offset) / c.scale;
                let b = self.eval_basis(0, xs, &mut buf);
                let mut acc = F::zero();
                for (w, v) in self.coef.iter().zip(b.iter()) {
                    acc = acc + *w * *v;
                }
                acc
            }
            2 => {
                let c0 = &self.coords[0];
                let c1 = &self.coords[1];
                let s1 = c1.basis.size();
                let mut buf1 = [F::zero(); STACK];
                let xs0 = (x[0] - c0.offset) / c0.scale;
                let xs1 = (x[1] - c1.offset) / c1.scale;
                let b0 = self.eval_basis(0, xs0, &mut buf);
                let b1 = self.eval_basis(1, xs1, &mut buf1);
                let mut acc = F::zero();
                for (r, &w0) in b0.iter().enumerate() {
                    let mut inner = F::zero();
                    for (c, &w1) in b1.iter().enumerate() {
                        inner = inner + self.coef[r * s1 + c] * w1;
                    }
                    acc = acc + w0 * inner;
                }
                acc
            }
            _ => {
                let mut scratch: Vec<Vec<F>> = self
                    .coords
                    .iter()
                    .map(|c| vec![F::zero(); c.basis.size()])
                    .collect();
                for (j, c) in self.coords.iter().enumerate() {
                    let xs = (x[j] - c.offset) / c.scale;
                    c.basis.eval_into(xs, &mut scratch[j]);
                }
                tensor_dot(&self.coef, &scratch)
            }
        }
    }

    /// Evaluates one coordinate basis into stack or heap storage.
    fn eval_basis<'b>(&self, j: usize, xs: F, buf: &'b mut [F; 16]) -> std::borrow::Cow<'b, [F]>
    where
        F: Clone,
    {
        let size = self.coords[j].basis.size();
        if size <= buf.len() {
            self.coords[j].basis.eval_into(xs, &mut buf[..size]);
            std::borrow::Cow::Borrowed(&buf[..size])
        } else {
            std::borrow::Cow::Owned(self.coords[j].basis.eval(xs))
        }
    }
}

fn design_row_into<F: Scalar>(
    coords: &[Coord<F>],
    x: &[F],
    scratch: &mut [Vec<F>],
    out: &mut [F],
) {
    if coords.is_empty() {
        out[0] = F::one();
        return;
    }
    for (j, c) in coords.iter().enumerate() {
        let xs = (x[j] - c.offset) / c.scale;
        c.basis.eval_into(xs, &mut scratch[j]);
    }
    // rightmost coordinate varies fastest
    out[0] = F::one();
    let mut filled = 1usize;
    for s in scratch.iter() {
        if filled == 1 {
            out[..s.len()].copy_from_slice(s);
            filled = s.len();
        } else {
            for r in (0..filled).rev() {
                let base = out[r];
                for (c, &v) in s.iter().enumerate() {
                    out[r * s.len() + c] = base * v;
                }
            }
            filled *= s.len();
        }
    }
}

fn tensor_dot<F: Scalar>(coef: &[F], factors: &[Vec<F>]) -> F {
    // contract the kron structure without materializing the row
    let mut current: Vec<F> = coef.to_vec();
    for s in factors.iter().rev() {
        let width = s.len();
        let rows = current.len() / width;
        let mut next = vec![F::zero(); rows];
        for r in 0..rows {
            let mut acc = F::zero();
            for c in 0..width {
                acc = acc + current[r * width + c] * s[c];
            }
            next[r] = acc;
        }
        current = next;
    }
    current[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_1d(xs: &[f64], ys: &[f64], df: usize, ridge: f64) -> PenalizedSpline<f64> {
        PenalizedSpline::fit(
            xs,
            1,
            ys,
            &SplineFitConfig {
                df: vec![df],
                ridge: RidgeSelect::Fixed(ridge),
            },
        )
        .unwrap()
    }

    #[test]
    fn constant_response() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let ys = vec![5.0; 30];
        let m = fit_1d(&xs, &ys, 4, 1e-6);
        for &x in &[0.1, 0.5, 0.9] {
            assert!((m.predict(&[x]) - 5.0).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_recovery_with_vanishing_ridge() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0 * 2.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        let m = fit_1d(&xs, &ys, 5, 1e-12);
        for &x in &xs {
            assert!((m.predict(&[x]) - 3.0 * x).abs() < 1e-6);
        }
    }

    #[test]
    fn intercept_only_fit() {
        let ys = vec![1.0f64, 2.0, 3.0, 4.0];
        let m = PenalizedSpline::fit(&[], 0, &ys, &SplineFitConfig::default()).unwrap();
        assert!((m.predict(&[]) - 2.5f64).abs() < 1e-12);
    }

    #[test]
    fn constant_coordinate_collapses() {
        // second coordinate constant: fit must behave like 1-D in the first
        let n = 25usize;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a = i as f64 / (n - 1) as f64;
            x.push(a);
            x.push(7.0);
            y.push(2.0 * a + 1.0);
        }
        let m = PenalizedSpline::fit(
            &x,
            2,
            &y,
            &SplineFitConfig {
                df: vec![4, 4],
                ridge: RidgeSelect::Fixed(1e-12),
            },
        )
        .unwrap();
        assert!((m.predict(&[0.3, 7.0]) - 1.6).abs() < 1e-6);
    }

    /// Independent Gauss-Jordan solve of the same penalized system.
    fn gauss_jordan_solve(mut a: Vec<f64>, p: usize, mut b: Vec<f64>) -> Vec<f64> {
        for col in 0..p {
            let mut piv = col;
            for r in (col + 1)..p {
                if a[r * p + col].abs() > a[piv * p + col].abs() {
                    piv = r;
                }
            }
            for c in 0..p {
                a.swap(col * p + c, piv * p + c);
            }
            b.swap(col, piv);
            let d = a[col * p + col];
            for c in 0..p {
                a[col * p + c] /= d;
            }
            b[col] /= d;
            for r in 0..p {
                if r != col {
                    let f = a[r * p + col];
                    for c in 0..p {
                        a[r * p + c] -= f * a[col * p + c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        b
    }

    #[test]
    fn matches_independent_dense_solver() {
        let n = 40usize;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a = i as f64 / (n - 1) as f64 * 2.0 - 1.0;
            let l = ((i * 7) % n) as f64 / n as f64;
            x.push(a);
            x.push(l);
            y.push((2.0 * a).sin() + l * l - 0.5 * a * l);
        }
        let cfg = SplineFitConfig {
            df: vec![4, 3],
            ridge: RidgeSelect::Fixed(1e-4),
        };
        let m = PenalizedSpline::fit(&x, 2, &y, &cfg).unwrap();
        let p = m.basis_size();

        let mut gram = vec![0.0f64; p * p];
        let mut rhs = vec![0.0f64; p];
        for i in 0..n {
            let row = m.design_row(&x[i * 2..i * 2 + 2]);
            for r in 0..p {
                rhs[r] += row[r] * y[i];
                for c in 0..p {
                    gram[r * p + c] += row[r] * row[c];
                }
            }
        }
        let RidgeSelect::Fixed(ridge) = cfg.ridge else {
            panic!("oracle test uses a fixed ridge");
        };
        let lambda = ridge * n as f64;
        for d in 1..p {
            gram[d * p + d] += lambda;
        }
        let coef = gauss_jordan_solve(gram, p, rhs);
        for i in 0..n {
            let row = m.design_row(&x[i * 2..i * 2 + 2]);
            let oracle: f64 = row.iter().zip(&coef).map(|(r, c)| r * c).sum();
            assert!(
                (m.predict(&x[i * 2..i * 2 + 2]) - oracle).abs() < 1e-8,
                "row {i}"
            );
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        // 5 rows cannot support a 5x5 tensor basis
        let x = vec![
            0.0, 0.9, 0.2, 0.1, 0.4, 0.8, 0.6, 0.3, 0.8, 0.5, 1.0, 0.7,
        ];
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let err = PenalizedSpline::fit(
            &x,
            2,
            &y,
            &SplineFitConfig {
                df: vec![4, 4],
                ridge: RidgeSelect::Fixed(0.0),
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn discrete_levels_dedup_knots() {
        let xs = vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let basis = SplineBasis::from_quantiles(&xs, 6);
        assert_eq!(basis.size(), 3); // one knot per distinct level
    }
}
