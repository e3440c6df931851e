//! Closed-loop subspace predictive control: one-step Markov-parameter regression and
//! structured assembly of the horizon predictor.

use nalgebra::DMatrix;

use super::{fit_one_step, IvDataset, OneStepCoeffs, PredictorMatrices};
use crate::error::{Error, Result};
use crate::hankel::hcat;

/// Same regression as [`fit_one_step`].
pub fn clspc_fit(data: &IvDataset) -> Result<OneStepCoeffs> {
    fit_one_step(data)
}

/// Structured estimates of `Gamma~_f Ku~_p`, `T~^u_f`, `Gamma~_f Ky~_p` and `H~_f`,
/// with predictor Markov parameters of order `p` and above set to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClSpcEstimates {
    pub gamma_ku_tilde: DMatrix<f64>,
    pub tu_tilde: DMatrix<f64>,
    pub gamma_ky_tilde: DMatrix<f64>,
    pub h_tilde: DMatrix<f64>,
}

pub fn clspc_estimates(coeffs: &OneStepCoeffs, f: usize) -> Result<ClSpcEstimates> {
    if f == 0 {
        return Err(Error::param("prediction horizon must be positive"));
    }
    let (p, r, l) = (coeffs.p, coeffs.r, coeffs.l);
    // C A~^t B~ and C A~^t K
    let markov_u = |t: usize| (t < p).then(|| &coeffs.beta[p - 1 - t]);
    let markov_y = |t: usize| (t < p).then(|| &coeffs.theta[p - 1 - t]);

    let mut gamma_ku_tilde = DMatrix::zeros(f * l, p * r);
    let mut gamma_ky_tilde = DMatrix::zeros(f * l, p * l);
    for i in 0..f {
        for j in 0..p {
            let t = p - 1 - j + i;
            if let Some(m) = markov_u(t) {
                gamma_ku_tilde.view_mut((i * l, j * r), (l, r)).copy_from(m);
            }
            if let Some(m) = markov_y(t) {
                gamma_ky_tilde.view_mut((i * l, j * l), (l, l)).copy_from(m);
            }
        }
    }
    let mut tu_tilde = DMatrix::zeros(f * l, f * r);
    let mut h_tilde = DMatrix::identity(f * l, f * l);
    for i in 0..f {
        tu_tilde.view_mut((i * l, i * r), (l, r)).copy_from(&coeffs.beta[p]);
        for j in 0..i {
            if let Some(m) = markov_u(i - j - 1) {
                tu_tilde.view_mut((i * l, j * r), (l, r)).copy_from(m);
            }
            if let Some(m) = markov_y(i - j - 1) {
                h_tilde.view_mut((i * l, j * l), (l, l)).copy_from(&(-m));
            }
        }
    }
    Ok(ClSpcEstimates {
        gamma_ku_tilde,
        tu_tilde,
        gamma_ky_tilde,
        h_tilde,
    })
}

/// `[Gamma_f Ku~_p, T^u_f, Gamma_f Ky~_p] = H~_f^{-1} [Gamma~_f Ku~_p, T~^u_f, Gamma~_f Ky~_p]`.
pub fn clspc_assemble(coeffs: &OneStepCoeffs, f: usize) -> Result<PredictorMatrices> {
    let est = clspc_estimates(coeffs, f)?;
    let (p, r, l) = (coeffs.p, coeffs.r, coeffs.l);
    let rhs = hcat(&[&est.gamma_ku_tilde, &est.tu_tilde, &est.gamma_ky_tilde]);
    let sol = est
        .h_tilde
        .solve_lower_triangular(&rhs)
        .ok_or_else(|| Error::dim("H~ has a zero on its diagonal"))?;
    PredictorMatrices::new(
        sol.columns(0, p * r).into_owned(),
        sol.columns(p * r, f * r).into_owned(),
        sol.columns(p * r + f * r, p * l).into_owned(),
        p,
        f,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{assemble_tilde, solve_final};

    fn coeffs(p: usize, r: usize, l: usize) -> OneStepCoeffs {
        let m = DMatrix::from_fn(l, (p + 1) * r + p * l, |i, j| {
            ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.5
        });
        OneStepCoeffs::from_regression(&m, p, r, l).unwrap()
    }

    #[test]
    fn matches_sequential_path() {
        for &(p, f, r, l) in &[(3, 5, 1, 1), (4, 2, 2, 2), (2, 6, 1, 2)] {
            let c = coeffs(p, r, l);
            let a = clspc_assemble(&c, f).unwrap();
            let b = solve_final(&assemble_tilde(&c, f).unwrap());
            let scale = 1.0 + b.lu.abs().max().max(b.gu.abs().max()).max(b.ly.abs().max());
            for (x, y) in [(&a.lu, &b.lu), (&a.gu, &b.gu), (&a.ly, &b.ly)] {
                assert!((x - y).abs().max() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn horizon_one_is_the_raw_regression() {
        let c = coeffs(4, 1, 1);
        let m = clspc_assemble(&c, 1).unwrap();
        let row = hcat(&[&m.lu, &m.gu, &m.ly]);
        assert_eq!(row, c.to_regression());
    }
}
