//! Sequential application of the one-step predictor over a horizon.

use alloc::format;

use nalgebra::{DMatrix, DVector};

use super::OneStepCoeffs;
use crate::error::{Error, Result};
use crate::hankel::ToeplitzSet;
use crate::plant::StateSpaceModel;

/// Banded matrices of the stacked one-step predictions
/// `y = Lu~ u_p + Gu~ u_f + Ly~ y_p + Gy~ y_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTilde {
    pub p: usize,
    pub f: usize,
    pub r: usize,
    pub l: usize,
    pub lu_tilde: DMatrix<f64>,
    pub gu_tilde: DMatrix<f64>,
    pub ly_tilde: DMatrix<f64>,
    pub gy_tilde: DMatrix<f64>,
}

/// Places the one-step coefficients on the bands of the `f`-step stacked predictor.
pub fn assemble_tilde(coeffs: &OneStepCoeffs, f: usize) -> Result<PredictorTilde> {
    if f == 0 {
        return Err(Error::param("prediction horizon must be positive"));
    }
    let (p, r, l) = (coeffs.p, coeffs.r, coeffs.l);
    let mut lu_tilde = DMatrix::zeros(f * l, p * r);
    let mut gu_tilde = DMatrix::zeros(f * l, f * r);
    let mut ly_tilde = DMatrix::zeros(f * l, p * l);
    let mut gy_tilde = DMatrix::zeros(f * l, f * l);
    for i in 0..f {
        // row block i holds beta_1..beta_{p+1} from concatenated input column i,
        // theta_1..theta_p from concatenated output column i
        for (j, beta) in coeffs.beta.iter().enumerate() {
            let col = i + j;
            if col < p {
                lu_tilde.view_mut((i * l, col * r), (l, r)).copy_from(beta);
            } else {
                gu_tilde.view_mut((i * l, (col - p) * r), (l, r)).copy_from(beta);
            }
        }
        for (j, theta) in coeffs.theta.iter().enumerate() {
            let col = i + j;
            if col < p {
                ly_tilde.view_mut((i * l, col * l), (l, l)).copy_from(theta);
            } else {
                gy_tilde.view_mut((i * l, (col - p) * l), (l, l)).copy_from(theta);
            }
        }
    }
    Ok(PredictorTilde {
        p,
        f,
        r,
        l,
        lu_tilde,
        gu_tilde,
        ly_tilde,
        gy_tilde,
    })
}

/// Horizon predictor `y_f = Lu u_p + Gu u_f + Ly y_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorMatrices {
    pub p: usize,
    pub f: usize,
    pub r: usize,
    pub l: usize,
    pub lu: DMatrix<f64>,
    pub gu: DMatrix<f64>,
    pub ly: DMatrix<f64>,
}

impl PredictorMatrices {
    pub fn new(lu: DMatrix<f64>, gu: DMatrix<f64>, ly: DMatrix<f64>, p: usize, f: usize) -> Result<Self> {
        if p == 0 || f == 0 || lu.ncols() % p != 0 || ly.ncols() % p != 0 || lu.nrows() % f != 0 {
            return Err(Error::dim("predictor blocks do not divide into p and f"));
        }
        let r = lu.ncols() / p;
        let l = ly.ncols() / p;
        if lu.nrows() != f * l || gu.shape() != (f * l, f * r) || ly.nrows() != f * l {
            return Err(Error::dim(format!(
                "inconsistent predictor blocks: Lu {:?}, Gu {:?}, Ly {:?}",
                lu.shape(),
                gu.shape(),
                ly.shape()
            )));
        }
        Ok(Self { p, f, r, l, lu, gu, ly })
    }

    /// The true-system predictor `[Gamma_f Ku~_p, T^u_f, Gamma_f Ky~_p]`.
    pub fn from_model(model: &StateSpaceModel, p: usize, f: usize) -> Result<Self> {
        let set = ToeplitzSet::new(model, f, p)?;
        Self::new(
            &set.gamma * &set.ku_tilde,
            set.tu,
            &set.gamma * &set.ky_tilde,
            p,
            f,
        )
    }

    /// `Lu u_p + Ly y_p`, the prediction for zero future input.
    pub fn free_response(&self, u_past: &DVector<f64>, y_past: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("past input", u_past, self.p * self.r)?;
        check_len("past output", y_past, self.p * self.l)?;
        Ok(&self.lu * u_past + &self.ly * y_past)
    }

    pub fn predict(
        &self,
        u_past: &DVector<f64>,
        y_past: &DVector<f64>,
        u_future: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("future input", u_future, self.f * self.r)?;
        Ok(self.free_response(u_past, y_past)? + &self.gu * u_future)
    }

    pub fn is_finite(&self) -> bool {
        [&self.lu, &self.gu, &self.ly]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

fn check_len(what: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(format!("{what} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

/// `y_hat = Lu u_p + Ly y_p + Gu u_f`.
pub fn predict(
    m: &PredictorMatrices,
    u_past: &DVector<f64>,
    y_past: &DVector<f64>,
    u_future: &DVector<f64>,
) -> Result<DVector<f64>> {
    m.predict(u_past, y_past, u_future)
}

/// Eliminates the predicted outputs from the right-hand side by forward substitution
/// over row blocks. Only the first block column of `Gu` is propagated; the remaining
/// columns are copies shifted down the block diagonals.
pub fn solve_final(tilde: &PredictorTilde) -> PredictorMatrices {
    let (p, f, r, l) = (tilde.p, tilde.f, tilde.r, tilde.l);
    let (wu, wy) = (p * r, p * l);
    // alpha = [Lu | Ly | Gu(:, first block)]
    let mut alpha = DMatrix::zeros(f * l, wu + wy + r);
    alpha.columns_mut(0, wu).copy_from(&tilde.lu_tilde);
    alpha.columns_mut(wu, wy).copy_from(&tilde.ly_tilde);
    alpha.columns_mut(wu + wy, r).copy_from(&tilde.gu_tilde.columns(0, r));
    for j in 1..f {
        for jp in 0..j {
            let g = tilde.gy_tilde.view((j * l, jp * l), (l, l));
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let upd = g * alpha.rows(jp * l, l);
            let mut row = alpha.rows_mut(j * l, l);
            row += upd;
        }
    }
    let first = alpha.columns(wu + wy, r).into_owned();
    let mut gu = DMatrix::zeros(f * l, f * r);
    for c in 0..f {
        let len = (f - c) * l;
        gu.view_mut((c * l, c * r), (len, r))
            .copy_from(&first.rows(0, len));
    }
    PredictorMatrices {
        p,
        f,
        r,
        l,
        lu: alpha.columns(0, wu).into_owned(),
        ly: alpha.columns(wu, wy).into_owned(),
        gu,
    }
}

/// Exact zeros above the block diagonal of an `(rows*nb) x (cols*nb)` block matrix.
pub fn is_block_lower_triangular(m: &DMatrix<f64>, block_rows: usize, block_cols: usize) -> bool {
    if block_rows == 0 || block_cols == 0 {
        return false;
    }
    let nb = m.nrows() / block_rows;
    (0..nb).all(|i| {
        ((i + 1)..m.ncols() / block_cols).all(|j| {
            m.view((i * block_rows, j * block_cols), (block_rows, block_cols))
                .iter()
                .all(|v| *v == 0.0)
        })
    })
}

/// Exact equality of all blocks along each block diagonal.
pub fn is_block_toeplitz(m: &DMatrix<f64>, block_rows: usize, block_cols: usize) -> bool {
    if block_rows == 0 || block_cols == 0 {
        return false;
    }
    let (nr, nc) = (m.nrows() / block_rows, m.ncols() / block_cols);
    (1..nr).all(|i| {
        (1..nc).all(|j| {
            m.view((i * block_rows, j * block_cols), (block_rows, block_cols))
                == m.view(((i - 1) * block_rows, (j - 1) * block_cols), (block_rows, block_cols))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn scalar_coeffs(beta: &[f64], theta: &[f64]) -> OneStepCoeffs {
        OneStepCoeffs {
            p: theta.len(),
            r: 1,
            l: 1,
            beta: beta.iter().map(|&b| DMatrix::from_element(1, 1, b)).collect(),
            theta: theta.iter().map(|&t| DMatrix::from_element(1, 1, t)).collect(),
        }
    }

    #[test]
    fn single_row_block() {
        let c = scalar_coeffs(&[1.0, 2.0, 3.0], &[4.0, 5.0]);
        let t = assemble_tilde(&c, 1).unwrap();
        assert_eq!(t.lu_tilde, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        assert_eq!(t.gu_tilde, DMatrix::from_element(1, 1, 3.0));
        assert_eq!(t.ly_tilde, DMatrix::from_row_slice(1, 2, &[4.0, 5.0]));
        assert_eq!(t.gy_tilde, DMatrix::zeros(1, 1));
    }

    #[test]
    fn banded_layout_p2_f3() {
        let (b1, b2, b3, t1, t2) = (1.0, 2.0, 3.0, 4.0, 5.0);
        let c = scalar_coeffs(&[b1, b2, b3], &[t1, t2]);
        let t = assemble_tilde(&c, 3).unwrap();
        let input = crate::hankel::hcat(&[&t.lu_tilde, &t.gu_tilde]);
        let output = crate::hankel::hcat(&[&t.ly_tilde, &t.gy_tilde]);
        #[rustfmt::skip]
        let want_u = DMatrix::from_row_slice(3, 5, &[
            b1, b2, b3, 0.0, 0.0,
            0.0, b1, b2, b3, 0.0,
            0.0, 0.0, b1, b2, b3,
        ]);
        #[rustfmt::skip]
        let want_y = DMatrix::from_row_slice(3, 5, &[
            t1, t2, 0.0, 0.0, 0.0,
            0.0, t1, t2, 0.0, 0.0,
            0.0, 0.0, t1, t2, 0.0,
        ]);
        assert_eq!(input, want_u);
        assert_eq!(output, want_y);
    }

    #[test]
    fn zero_theta_gives_zero_gy_and_identity_solve() {
        let c = scalar_coeffs(&[0.3, -0.2, 0.7, 0.1], &[0.0, 0.0, 0.0]);
        let t = assemble_tilde(&c, 4).unwrap();
        assert_eq!(t.gy_tilde, DMatrix::zeros(4, 4));
        let m = solve_final(&t);
        assert_eq!(m.lu, t.lu_tilde);
        assert_eq!(m.gu, t.gu_tilde);
        assert_eq!(m.ly, t.ly_tilde);
    }

    #[test]
    fn recursion_matches_dense_solve() {
        let beta: Vec<f64> = (0..4).map(|i| 0.3 * (i as f64) - 0.4).collect();
        let theta = vec![0.2, -0.5, 0.45];
        let t = assemble_tilde(&scalar_coeffs(&beta, &theta), 5).unwrap();
        let m = solve_final(&t);
        let lhs = DMatrix::identity(5, 5) - &t.gy_tilde;
        let rhs = crate::hankel::hcat(&[&t.lu_tilde, &t.gu_tilde, &t.ly_tilde]);
        let dense = lhs.solve_lower_triangular(&rhs).unwrap();
        let got = crate::hankel::hcat(&[&m.lu, &m.gu, &m.ly]);
        assert!((dense - got).abs().max() < 1e-12);
        assert!(is_block_lower_triangular(&m.gu, 1, 1));
        assert!(is_block_toeplitz(&m.gu, 1, 1));
    }

    #[test]
    fn structure_checks_detect_violations() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]);
        assert!(is_block_lower_triangular(&m, 1, 1));
        assert!(is_block_toeplitz(&m, 1, 1));
        m[(1, 1)] = 1.5;
        assert!(!is_block_toeplitz(&m, 1, 1));
        m[(0, 1)] = 1e-300;
        assert!(!is_block_lower_triangular(&m, 1, 1));
    }

    #[test]
    fn prediction_is_linear_and_zero_at_zero() {
        let t = assemble_tilde(&scalar_coeffs(&[0.1, 0.2, 0.3], &[0.4, -0.1]), 3).unwrap();
        let m = solve_final(&t);
        let z2 = DVector::zeros(2);
        let z3 = DVector::zeros(3);
        assert_eq!(m.predict(&z2, &z2, &z3).unwrap(), z3);
        let a = (DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![0.5, -1.0]), DVector::from_vec(vec![3.0, 0.0, 1.0]));
        let b = (DVector::from_vec(vec![-0.3, 1.0]), DVector::from_vec(vec![2.0, 2.0]), DVector::from_vec(vec![0.0, 1.0, -1.0]));
        let sum = m.predict(&(&a.0 + &b.0), &(&a.1 + &b.1), &(&a.2 + &b.2)).unwrap();
        let parts = m.predict(&a.0, &a.1, &a.2).unwrap() + m.predict(&b.0, &b.1, &b.2).unwrap();
        assert!((sum - parts).abs().max() < 1e-12);
        assert!(m.predict(&z3, &z2, &z3).is_err());
    }

    #[test]
    fn true_model_predictor_matches_simulation() {
        use crate::plant::{simulate_open_loop, NoiseProcess};
        let model = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 0.9),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 0.45),
        )
        .unwrap();
        let (p, f) = (30, 6);
        let u: Vec<_> = (0..p + f)
            .map(|k| DVector::from_element(1, ((k * 7) % 5) as f64 - 2.0))
            .collect();
        let log = simulate_open_loop(&model, &u, &NoiseProcess::isotropic(0, 1, 0.0), DVector::from_element(1, 3.0)).unwrap();
        let m = PredictorMatrices::from_model(&model, p, f).unwrap();
        let up = crate::hankel::data_vector(log.u(), 0, p).unwrap();
        let yp = crate::hankel::data_vector(log.y(), 0, p).unwrap();
        let uf = crate::hankel::data_vector(log.u(), p, f).unwrap();
        let yf = crate::hankel::data_vector(log.y(), p, f).unwrap();
        let yhat = m.predict(&up, &yp, &uf).unwrap();
        assert!((yhat - yf).abs().max() < 1e-6);
    }
}
