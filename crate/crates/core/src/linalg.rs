//! Small dense linear-algebra helpers shared by the other modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `a^k` by repeated multiplication (`k` is small everywhere it is used).
pub fn mat_pow(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max)
}

/// Numerical rank: singular values above `max(rows, cols) * eps * sigma_max * tol_scale`.
pub fn numerical_rank(m: &DMatrix<f64>, tol_scale: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * tol_scale;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Largest absolute entry (0 for an empty matrix).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// How a regression reacts to a correlation matrix whose condition number exceeds the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankPolicy {
    /// Return [`Error::IllConditioned`].
    Reject,
    /// Use the minimum-norm solution from a truncated pseudoinverse.
    MinimumNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_condition: f64,
    pub policy: RankPolicy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_condition: 1e12,
            policy: RankPolicy::Reject,
        }
    }
}

impl SolveOptions {
    pub fn minimum_norm() -> Self {
        Self {
            policy: RankPolicy::MinimumNorm,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    /// `sigma_max / sigma_min` of the factored matrix (infinite when singular).
    pub condition: f64,
    /// Number of singular values kept.
    pub rank: usize,
    /// Whether singular values were discarded.
    pub truncated: bool,
}

/// Solves `x * rhs = lhs` for `x`, i.e. `x = lhs * pinv(rhs)`, with `rhs` square or wide.
///
/// `window_start` only labels the error.
pub fn solve_right(
    lhs: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    opts: SolveOptions,
    window_start: usize,
) -> Result<(DMatrix<f64>, SolveDiagnostics)> {
    if lhs.ncols() != rhs.ncols() {
        return Err(Error::dim(alloc::format!(
            "left factor has {} columns, correlation matrix has {}",
            lhs.ncols(),
            rhs.ncols()
        )));
    }
    let rows = rhs.nrows();
    if rows > rhs.ncols() {
        return Err(Error::RankDeficient {
            rank: rhs.ncols(),
            required: rows,
        });
    }
    let (u, sv, v_t) = if rhs.is_square() && *rhs == rhs.transpose() {
        // rhs = Q diag(lambda) Q^T = Q |diag(lambda)| (sign(lambda) Q^T)
        let eig = rhs.clone().symmetric_eigen();
        let mut v_t = eig.eigenvectors.transpose();
        for (i, lam) in eig.eigenvalues.iter().enumerate() {
            if *lam < 0.0 {
                v_t.row_mut(i).neg_mut();
            }
        }
        (eig.eigenvectors, eig.eigenvalues.abs(), v_t)
    } else {
        let svd = rhs.clone().svd(true, true);
        (
            svd.u.expect("svd computed with u"),
            svd.singular_values,
            svd.v_t.expect("svd computed with v_t"),
        )
    };
    let sv = &sv;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let ill = !(condition <= opts.max_condition) || smax == 0.0;
    if ill && opts.policy == RankPolicy::Reject {
        return Err(Error::IllConditioned {
            window_start,
            condition,
        });
    }
    let cutoff = if ill { smax / opts.max_condition } else { 0.0 };
    // pinv(rhs) = V diag(1/s) U^T, so x = (lhs V) diag(1/s) U^T
    let lv = lhs * v_t.transpose();
    let mut scaled = lv;
    let mut rank = 0;
    for (j, &s) in sv.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            scaled.column_mut(j).scale_mut(1.0 / s);
            rank += 1;
        } else {
            scaled.column_mut(j).fill(0.0);
        }
    }
    let x = scaled * u.transpose();
    Ok((
        x,
        SolveDiagnostics {
            condition,
            rank,
            truncated: rank < sv.len(),
        },
    ))
}

/// Stacks vectors into one column vector.
pub fn stack(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&a) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn solve_right_matches_inverse() {
        let rhs = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let lhs = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let (x, diag) = solve_right(&lhs, &rhs, SolveOptions::default(), 0).unwrap();
        let expect = &lhs * rhs.clone().try_inverse().unwrap();
        assert!((x - expect).abs().max() < 1e-12);
        assert_eq!(diag.rank, 2);
        assert!(!diag.truncated);
    }

    #[test]
    fn singular_rejected_or_min_norm() {
        let rhs = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let lhs = DMatrix::from_row_slice(1, 2, &[2.0, 2.0]);
        assert!(matches!(
            solve_right(&lhs, &rhs, SolveOptions::default(), 7),
            Err(Error::IllConditioned { window_start: 7, .. })
        ));
        let (x, diag) = solve_right(&lhs, &rhs, SolveOptions::minimum_norm(), 7).unwrap();
        assert_eq!(diag.rank, 1);
        // minimum-norm solution of x [1 1; 1 1] = [2 2] is [1 1]
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_of_outer_product() {
        let v = DVector::from_vec(alloc::vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert_eq!(numerical_rank(&m, 1.0), 1);
    }
}
