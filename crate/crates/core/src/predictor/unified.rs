//! The general block formulation: `q` columns of `s`-step predictions, each column
//! shifted by `s` samples, plus DeePC with instruments (`s = f`, `q = 1`).

use alloc::format;

use nalgebra::{DMatrix, DVector};

use super::{iv_regression, IvDataset, PredictorMatrices};
use crate::error::{Error, Result};
use crate::linalg::{solve_right, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedPrediction {
    /// Predicted outputs over the horizon `f = s q`.
    pub y_hat: DVector<f64>,
    /// Minimum-norm `G^IV`, one column per block (`n_z x q`).
    pub g_iv: DMatrix<f64>,
    /// The completed regressor columns (`rows x q`), predicted outputs included.
    pub psi_bar: DMatrix<f64>,
}

fn pinv_correlation(data: &IvDataset, opts: SolveOptions) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rows = data.psi.rows();
    let nz = data.z().nrows();
    if nz < rows {
        return Err(Error::RankDeficient {
            rank: nz,
            required: rows,
        });
    }
    let corr = data.correlations();
    let (pinv, diag) = solve_right(&DMatrix::identity(nz, nz), &corr.sigma_psi_z, opts, data.i)?;
    if diag.rank < rows {
        return Err(Error::RankDeficient {
            rank: diag.rank,
            required: rows,
        });
    }
    Ok((pinv, corr.sigma_yz))
}

/// Predicts `q` blocks of `s` outputs sequentially; each block's predictions become
/// known past outputs for the next one.
pub fn unified_cl_deepc(
    data: &IvDataset,
    q: usize,
    u_past: &DVector<f64>,
    y_past: &DVector<f64>,
    u_future: &DVector<f64>,
    opts: SolveOptions,
) -> Result<UnifiedPrediction> {
    let (p, s, r, l) = (data.p, data.s, data.r(), data.l());
    let f = s * q;
    if q == 0 {
        return Err(Error::param("number of blocks must be positive"));
    }
    if u_past.len() != p * r || y_past.len() != p * l || u_future.len() != f * r {
        return Err(Error::dim(format!(
            "expected past input {}, past output {}, future input {}; got {}, {}, {}",
            p * r,
            p * l,
            f * r,
            u_past.len(),
            y_past.len(),
            u_future.len()
        )));
    }
    let (pinv, sigma_yz) = pinv_correlation(data, opts)?;
    let rows = data.psi.rows();

    let mut u_all = DVector::zeros((p + f) * r);
    u_all.rows_mut(0, p * r).copy_from(u_past);
    u_all.rows_mut(p * r, f * r).copy_from(u_future);
    let mut y_all = DVector::zeros((p + f) * l);
    y_all.rows_mut(0, p * l).copy_from(y_past);

    let mut g_iv = DMatrix::zeros(pinv.nrows(), q);
    let mut psi_bar = DMatrix::zeros(rows, q);
    for j in 0..q {
        let t0 = j * s;
        let mut col = DVector::zeros(rows);
        col.rows_mut(0, (p + s) * r)
            .copy_from(&u_all.rows(t0 * r, (p + s) * r));
        col.rows_mut((p + s) * r, p * l)
            .copy_from(&y_all.rows(t0 * l, p * l));
        let g = &pinv * &col;
        let y_block = &sigma_yz * &g;
        y_all.rows_mut((t0 + p) * l, s * l).copy_from(&y_block);
        g_iv.set_column(j, &g);
        psi_bar.set_column(j, &col);
    }
    Ok(UnifiedPrediction {
        y_hat: y_all.rows(p * l, f * l).into_owned(),
        g_iv,
        psi_bar,
    })
}

/// The implied `f`-step DeePC predictor `Y_f Z^T (Psi Z^T)^{-1}` split into
/// past-input, future-input and past-output blocks. Its future-input block is not
/// constrained to be causal.
pub fn deepc_iv_predictor(data: &IvDataset, opts: SolveOptions) -> Result<PredictorMatrices> {
    let (m, _) = iv_regression(data, opts)?;
    deepc_from_regression(&m, data)
}

/// Splits an `fl x ((p+f)r + pl)` regression into the DeePC predictor blocks.
pub fn deepc_from_regression(m: &DMatrix<f64>, data: &IvDataset) -> Result<PredictorMatrices> {
    let (p, f, r, l) = (data.p, data.s, data.r(), data.l());
    PredictorMatrices::new(
        m.columns(0, p * r).into_owned(),
        m.columns(p * r, f * r).into_owned(),
        m.columns((p + f) * r, p * l).into_owned(),
        p,
        f,
    )
}

pub fn deepc_iv_predict(
    data: &IvDataset,
    u_past: &DVector<f64>,
    y_past: &DVector<f64>,
    u_future: &DVector<f64>,
) -> Result<DVector<f64>> {
    deepc_iv_predictor(data, SolveOptions::default())?.predict(u_past, y_past, u_future)
}

/// `g = Z^T Sigma_psiz^+ psi_bar`; with `Z = Psi` the minimum-norm solution of `Psi g = psi_bar`.
pub fn min_norm_g(data: &IvDataset, psi_bar: &DVector<f64>, opts: SolveOptions) -> Result<DVector<f64>> {
    if psi_bar.len() != data.psi.rows() {
        return Err(Error::dim(format!(
            "regressor column has length {}, expected {}",
            psi_bar.len(),
            data.psi.rows()
        )));
    }
    let (pinv, _) = pinv_correlation(data, opts)?;
    Ok(data.z().transpose() * (pinv * psi_bar))
}
