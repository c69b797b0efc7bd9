//! Kernel functions and local linear kernel regression (LLKR).
//!
//! The smoother regresses a response on the treatment inside a bandwidth-`h`
//! window around the evaluation point `a`, using the basis `[1, (A-a)/h]`.
//! The intercept of the weighted least-squares fit is the curve estimate and
//! the smoother weights `w_ni(a, h)` satisfy `sum w = 1` and
//! `sum w (A_i - a) = 0` exactly.

use serde::{Deserialize, Serialize};

use crate::data::TargetInterval;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Second-order kernels supported by the smoother. All have support [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Triangular,
    Uniform,
}

impl Kernel {
    /// Evaluates the kernel; zero outside [-1, 1].
    pub fn eval<F: Scalar>(self, u: F) -> F {
        let one = F::one();
        if u.abs() > one {
            return F::zero();
        }
        match self {
            Kernel::Epanechnikov => F::c(0.75) * (one - u * u),
            Kernel::Triangular => one - u.abs(),
            Kernel::Uniform => F::c(0.5),
        }
    }

    /// `(int K^2, int K s^2)` by adaptive quadrature.
    pub fn constants<F: Scalar>(self) -> (F, F) {
        let k2 = adaptive_simpson(|s| self.eval::<f64>(s).powi(2), -1.0, 1.0, 1e-11);
        let ks2 = adaptive_simpson(|s| self.eval::<f64>(s) * s * s, -1.0, 1.0, 1e-11);
        (F::c(k2), F::c(ks2))
    }

    /// First three moments `(int K, int K s, int K s^2)` by quadrature.
    pub fn moments<F: Scalar>(self) -> (F, F, F) {
        let m0 = adaptive_simpson(|s| self.eval::<f64>(s), -1.0, 1.0, 1e-11);
        let m1 = adaptive_simpson(|s| self.eval::<f64>(s) * s, -1.0, 1.0, 1e-11);
        let m2 = adaptive_simpson(|s| self.eval::<f64>(s) * s * s, -1.0, 1.0, 1e-11);
        (F::c(m0), F::c(m1), F::c(m2))
    }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson<G: Fn(f64) -> f64>(f: G, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<G: Fn(f64) -> f64>(f: &G, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse<G: Fn(f64) -> f64>(
        f: &G,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 40)
}

/// Result of a local linear fit at a single evaluation point.
#[derive(Debug, Clone)]
pub struct LlkrFit<F> {
    pub a: F,
    pub h: F,
    /// Curve estimate at `a`.
    pub intercept: F,
    /// Local slope per unit of the treatment.
    pub slope: F,
    /// Smoother weights `w_ni(a, h)`, one per input point (zero outside the
    /// window).
    pub weights: Vec<F>,
    /// Points with `|A_i - a| <= h`.
    pub effective_n: usize,
}

/// Kernel-weighted moment sums of a window; everything the 2x2 normal
/// equations need.
struct WindowSums<F> {
    s0: F,
    s1: F,
    s2: F,
    t0: F,
    t1: F,
    det: F,
    effective_n: usize,
    distinct: bool,
}

fn window_sums<F: Scalar>(points: &[(F, F)], a: F, h: F, kernel: Kernel) -> WindowSums<F> {
    let mut s0 = F::zero();
    let mut s1 = F::zero();
    let mut s2 = F::zero();
    let mut t0 = F::zero();
    let mut t1 = F::zero();
    let mut effective_n = 0usize;
    let mut first_a: Option<F> = None;
    let mut distinct = false;
    for &(ai, si) in points {
        let t = (ai - a) / h;
        if t.abs() <= F::one() {
            effective_n += 1;
        }
        let k = kernel.eval(t);
        if k > F::zero() {
            match first_a {
                None => first_a = Some(ai),
                Some(f) if f != ai => distinct = true,
                _ => {}
            }
            s0 = s0 + k;
            s1 = s1 + k * t;
            s2 = s2 + k * t * t;
            t0 = t0 + k * si;
            t1 = t1 + k * t * si;
        }
    }
    let det = s0 * s2 - s1 * s1;
    WindowSums {
        s0,
        s1,
        s2,
        t0,
        t1,
        det,
        effective_n,
        distinct,
    }
}

fn check_window<F: Scalar>(w: &WindowSums<F>, a: F) -> Result<()> {
    if !w.distinct {
        let have = if w.s0 > F::zero() && !w.distinct && w.effective_n > 0 {
            1.min(w.effective_n)
        } else {
            0
        };
        return Err(Error::InsufficientSupport {
            at: a.to_f64().unwrap_or(f64::NAN),
            have,
            need: 2,
        });
    }
    let scale = w.s0 * w.s2;
    if w.det <= F::c(1e-13) * scale {
        let tr = w.s0 + w.s2;
        let disc = ((w.s0 - w.s2) * (w.s0 - w.s2) + F::c(4.0) * w.s1 * w.s1).sqrt();
        let lo = (tr - disc) * F::c(0.5);
        let cond = if lo > F::zero() {
            ((tr + disc) * F::c(0.5) / lo).to_f64().unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        return Err(Error::RankDeficient {
            at: a.to_f64().unwrap_or(f64::NAN),
            cond,
        });
    }
    Ok(())
}

/// Local linear fit of the responses `s_i` on the treatments `A_i` at `a`.
pub fn llkr_fit<F: Scalar>(points: &[(F, F)], a: F, h: F, kernel: Kernel) -> Result<LlkrFit<F>> {
    if h <= F::zero() {
        return Err(Error::Misuse("bandwidth must be positive".into()));
    }
    let w = window_sums(points, a, h, kernel);
    check_window(&w, a)?;
    let intercept = (w.s2 * w.t0 - w.s1 * w.t1) / w.det;
    let slope = (w.s0 * w.t1 - w.s1 * w.t0) / w.det / h;
    let weights = points
        .iter()
        .map(|&(ai, _)| {
            let t = (ai - a) / h;
            let k = kernel.eval(t);
            k * (w.s2 - w.s1 * t) / w.det
        })
        .collect();
    Ok(LlkrFit {
        a,
        h,
        intercept,
        slope,
        weights,
        effective_n: w.effective_n,
    })
}

/// Curve estimate alone, without materializing the weight vector.
pub fn llkr_intercept<F: Scalar>(points: &[(F, F)], a: F, h: F, kernel: Kernel) -> Result<F> {
    if h <= F::zero() {
        return Err(Error::Misuse("bandwidth must be positive".into()));
    }
    let w = window_sums(points, a, h, kernel);
    check_window(&w, a)?;
    Ok((w.s2 * w.t0 - w.s1 * w.t1) / w.det)
}

/// Diagonal smoother weight `w_ni(a_i, h)` for an in-sample point value.
pub fn leverage<F: Scalar>(points: &[(F, F)], a_i: F, h: F, kernel: Kernel) -> Result<F> {
    if h <= F::zero() {
        return Err(Error::Misuse("bandwidth must be positive".into()));
    }
    let w = window_sums(points, a_i, h, kernel);
    check_window(&w, a_i)?;
    // at a = A_i the point's own t is 0, so its weight is K(0) S2 / det
    Ok(kernel.eval(F::zero()) * w.s2 / w.det)
}

/// Points pre-sorted by treatment value, so a bandwidth window is a
/// contiguous index range. Fits here avoid the full scan that
/// [`llkr_fit`] pays to keep weights aligned with input order.
pub struct SortedPoints {
    a: Vec<f64>,
    s: Vec<f64>,
}

impl SortedPoints {
    pub fn new(points: &[(f64, f64)]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&i, &j| points[i].0.partial_cmp(&points[j].0).unwrap());
        SortedPoints {
            a: idx.iter().map(|&i| points[i].0).collect(),
            s: idx.iter().map(|&i| points[i].1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn window_sums(&self, a: f64, h: f64, kernel: Kernel) -> WindowSums<f64> {
        let lo = self.a.partition_point(|&v| v < a - h);
        let hi = self.a.partition_point(|&v| v <= a + h);
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut t0 = 0.0;
        let mut t1 = 0.0;
        let mut first_a: Option<f64> = None;
        let mut distinct = false;
        for i in lo..hi {
            let t = (self.a[i] - a) / h;
            let k = kernel.eval(t);
            if k > 0.0 {
                match first_a {
                    None => first_a = Some(self.a[i]),
                    Some(f) if f != self.a[i] => distinct = true,
                    _ => {}
                }
                s0 += k;
                s1 += k * t;
                s2 += k * t * t;
                t0 += k * self.s[i];
                t1 += k * t * self.s[i];
            }
        }
        WindowSums {
            s0,
            s1,
            s2,
            t0,
            t1,
            det: s0 * s2 - s1 * s1,
            effective_n: hi - lo,
            distinct,
        }
    }

    /// Curve estimate at `a`.
    pub fn intercept_at(&self, a: f64, h: f64, kernel: Kernel) -> Result<f64> {
        if h <= 0.0 {
            return Err(Error::Misuse("bandwidth must be positive".into()));
        }
        let w = self.window_sums(a, h, kernel);
        check_window(&w, a)?;
        Ok((w.s2 * w.t0 - w.s1 * w.t1) / w.det)
    }

    /// `(intercept, own-point leverage)` at an in-sample value `a`.
    pub fn fit_with_leverage(&self, a: f64, h: f64, kernel: Kernel) -> Result<(f64, f64)> {
        let w = self.window_sums(a, h, kernel);
        check_window(&w, a)?;
        let intercept = (w.s2 * w.t0 - w.s1 * w.t1) / w.det;
        let lev = kernel.eval(0.0f64) * w.s2 / w.det;
        Ok((intercept, lev))
    }

    /// Index range of points with `|A_i - a| <= h`.
    pub fn window_range(&self, a: f64, h: f64) -> (usize, usize) {
        (
            self.a.partition_point(|&v| v < a - h),
            self.a.partition_point(|&v| v <= a + h),
        )
    }

    pub fn a_values(&self) -> &[f64] {
        &self.a
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s
    }
}

/// Localized bandwidth-selection objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthObjective {
    /// Leave-one-out cross-validation via the smoother diagonal.
    #[default]
    Loocv,
    /// Generalized cross-validation with the localized trace.
    Gcv,
    /// Mallows-type criterion with the localized trace.
    Cp,
}

/// Outcome of a bandwidth search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub h: f64,
    /// `(h, objective)` per grid value; `None` when `h` lacked support at
    /// some required point.
    pub objective: Vec<(f64, Option<f64>)>,
    /// Points dropped because their leverage was within 1e-8 of 1.
    pub excluded_high_leverage: usize,
}

const LEVERAGE_CEIL: f64 = 1.0 - 1e-8;

struct HEval {
    sum_loocv: f64,
    sum_sq: f64,
    trace: f64,
    excluded: usize,
    ok: bool,
}

fn evaluate_h(sorted: &SortedPoints, required: &[(f64, f64)], h: f64, kernel: Kernel) -> HEval {
    let mut out = HEval {
        sum_loocv: 0.0,
        sum_sq: 0.0,
        trace: 0.0,
        excluded: 0,
        ok: true,
    };
    for &(ai, si) in required {
        let (intercept, lev) = match sorted.fit_with_leverage(ai, h, kernel) {
            Ok(v) => v,
            Err(_) => {
                out.ok = false;
                return out;
            }
        };
        let r = si - intercept;
        out.sum_sq += r * r;
        out.trace += lev;
        if lev >= LEVERAGE_CEIL {
            out.excluded += 1;
        } else {
            let u = r / (1.0 - lev);
            out.sum_loocv += u * u;
        }
    }
    out
}

/// Selects a bandwidth from `h_grid` by minimizing the localized objective
/// over points with `A_i` in `interval`. Ties break toward the larger `h`.
pub fn select_bandwidth(
    points: &[(f64, f64)],
    interval: &TargetInterval,
    h_grid: &[f64],
    kernel: Kernel,
    objective: BandwidthObjective,
) -> Result<BandwidthSelection> {
    if h_grid.is_empty() {
        return Err(Error::Misuse("bandwidth grid is empty".into()));
    }
    if h_grid.iter().any(|&h| h <= 0.0) {
        return Err(Error::Misuse("bandwidth grid must be positive".into()));
    }
    let required: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| interval.contains(p.0))
        .collect();
    if required.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} observations inside the target interval (need 2)",
            required.len()
        )));
    }
    let sorted = SortedPoints::new(points);
    let mut grid: Vec<f64> = h_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let evals: Vec<HEval> = grid
        .iter()
        .map(|&h| evaluate_h(&sorted, &required, h, kernel))
        .collect();

    let n = points.len() as f64;
    let m = required.len() as f64;
    // noise scale for Cp from the smallest qualified bandwidth
    let sigma2 = evals
        .iter()
        .find(|e| e.ok)
        .map(|e| e.sum_sq / (m - e.trace).max(1.0));

    let mut excluded = 0usize;
    let mut failing = Vec::new();
    let mut objective_out = Vec::with_capacity(grid.len());
    for (h, ev) in grid.iter().zip(&evals) {
        if !ev.ok {
            failing.push(*h);
            objective_out.push((*h, None));
            continue;
        }
        let value = match objective {
            BandwidthObjective::Loocv => ev.sum_loocv / n,
            BandwidthObjective::Gcv => {
                let denom = 1.0 - ev.trace / m;
                if denom <= 0.0 {
                    failing.push(*h);
                    objective_out.push((*h, None));
                    continue;
                }
                (ev.sum_sq / m) / (denom * denom)
            }
            BandwidthObjective::Cp => ev.sum_sq / m + 2.0 * sigma2.unwrap_or(0.0) * ev.trace / m,
        };
        objective_out.push((*h, Some(value)));
        excluded = excluded.max(ev.excluded);
    }
    let min_value = objective_out
        .iter()
        .filter_map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    if !min_value.is_finite() {
        return Err(Error::BandwidthSelection { failing });
    }
    // exact fits leave only rounding noise in the objective; treat values
    // within noise of the minimum as tied and take the largest h
    let score_scale = required.iter().map(|p| p.1.powi(2)).sum::<f64>() / m;
    let tie_tol = 1e-12 * score_scale.max(min_value);
    let h = objective_out
        .iter()
        .rev()
        .find(|(_, v)| v.is_some_and(|v| v <= min_value + tie_tol))
        .map(|(h, _)| *h)
        .expect("a finite minimum exists");
    Ok(BandwidthSelection {
        h,
        objective: objective_out,
        excluded_high_leverage: excluded,
    })
}

/// Rule-of-thumb bandwidth scale: `1.06 min(sd, iqr/1.34) n^{-1/5}`.
pub fn silverman_scale(a: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mean = a.iter().sum::<f64>() / n as f64;
    let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    let mut sorted = a.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let q = |p: f64| -> f64 {
        let idx = p * (n as f64 - 1.0);
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let frac = idx - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let scale = 1.06 * spread * (n as f64).powf(-0.2);
    if scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Default log-spaced bandwidth grid spanning `[0.25, 4] x` the
/// rule-of-thumb scale.
pub fn default_h_grid(a: &[f64], count: usize) -> Vec<f64> {
    let scale = silverman_scale(a);
    let lo = (0.25 * scale).ln();
    let hi = (4.0 * scale).ln();
    (0..count)
        .map(|i| {
            let f = if count == 1 {
                0.5
            } else {
                i as f64 / (count - 1) as f64
            };
            (lo + f * (hi - lo)).exp()
        })
        .collect()
}
