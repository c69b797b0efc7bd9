//! Small dense symmetric solves used by the spline and local fits.
//!
//! Systems here are tiny (tensor-spline normal equations, local linear
//! designs), so an in-place Cholesky is all that is needed.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// In-place lower Cholesky factorization of a `p x p` row-major symmetric
/// matrix. Fails when a pivot is not safely positive.
pub fn cholesky_in_place<F: Scalar>(a: &mut [F], p: usize) -> Result<()> {
    debug_assert_eq!(a.len(), p * p);
    let mut max_diag = F::zero();
    for i in 0..p {
        if a[i * p + i] > max_diag {
            max_diag = a[i * p + i];
        }
    }
    let tol = F::c(1e-14) * max_diag.max(F::c(1e-300));
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d = d - a[j * p + k] * a[j * p + k];
        }
        if d <= tol {
            return Err(Error::Conditioning(format!(
                "cholesky pivot {} not positive (value {:e})",
                j,
                d.to_f64().unwrap_or(f64::NAN)
            )));
        }
        let dj = d.sqrt();
        a[j * p + j] = dj;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s = s - a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / dj;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` given the factor from [`cholesky_in_place`];
/// overwrites `b` with the solution.
pub fn cholesky_solve<F: Scalar>(chol: &[F], p: usize, b: &mut [F]) {
    debug_assert_eq!(b.len(), p);
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s = s - chol[i * p + k] * b[k];
        }
        b[i] = s / chol[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in (i + 1)..p {
            s = s - chol[k * p + i] * b[k];
        }
        b[i] = s / chol[i * p + i];
    }
}

/// Solves the symmetric positive definite system `a x = b`.
pub fn solve_sym<F: Scalar>(mut a: Vec<F>, mut b: Vec<F>) -> Result<Vec<F>> {
    let p = b.len();
    cholesky_in_place(&mut a, p)?;
    cholesky_solve(&a, p, &mut b);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        // A = [[4,2],[2,3]], b = [10, 8] -> x = [1.75, 1.5]
        let a = vec![4.0f64, 2.0, 2.0, 3.0];
        let x = solve_sym(a, vec![10.0, 8.0]).unwrap();
        assert!((x[0] - 1.75).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular_matrix() {
        let a = vec![1.0f64, 1.0, 1.0, 1.0];
        assert!(solve_sym(a, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn works_in_f32() {
        let a = vec![2.0f32, 0.0, 0.0, 2.0];
        let x = solve_sym(a, vec![2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6);
        assert!((x[1] - 2.0).abs() < 1e-6);
    }
}
