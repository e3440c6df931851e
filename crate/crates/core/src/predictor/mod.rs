//! Instrumental-variable output predictors.
//!
//! A sliding window of `nbar` samples is turned into an [`IvDataset`]. With block
//! length `s = 1` the regression yields one-step predictor Markov parameters
//! ([`OneStepCoeffs`]) which are applied sequentially over the horizon
//! ([`assemble_tilde`], [`solve_final`]). [`clspc`] assembles the same horizon
//! predictor from structured Markov-parameter matrices, [`unified`] solves the
//! general block formulation including DeePC with instruments.

pub mod clspc;
pub mod sequential;
pub mod unified;

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hankel::{block_hankel, psi, BlockHankel, PsiMatrix};
use crate::linalg::{solve_right, SolveDiagnostics, SolveOptions};
use crate::plant::SignalLog;

pub use clspc::{clspc_assemble, clspc_estimates, clspc_fit, ClSpcEstimates};
pub use sequential::{
    assemble_tilde, is_block_lower_triangular, is_block_toeplitz, predict, solve_final,
    PredictorMatrices, PredictorTilde,
};
pub use unified::{
    deepc_from_regression, deepc_iv_predict, deepc_iv_predictor, min_norm_g, unified_cl_deepc, UnifiedPrediction,
};

/// Regressors `Psi_{i,s,N}`, targets `Y_{i+p,s,N}` and instruments `Z` of one data window.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    pub psi: PsiMatrix,
    pub yf: BlockHankel,
    /// `None` means `Z = Psi`.
    instruments: Option<DMatrix<f64>>,
    pub i: usize,
    pub p: usize,
    pub s: usize,
    pub n: usize,
}

/// Builds the dataset from the `nbar` samples `[end_index - nbar, end_index)` of `log`.
pub fn build_dataset(
    log: &SignalLog,
    end_index: usize,
    nbar: usize,
    p: usize,
    s: usize,
) -> Result<IvDataset> {
    if p == 0 || s == 0 {
        return Err(Error::param("p and s must be positive"));
    }
    if nbar < p + s {
        return Err(Error::WindowTooShort {
            nbar,
            required: p + s,
        });
    }
    if end_index > log.len() || end_index < nbar {
        return Err(Error::InsufficientData {
            needed: end_index.max(nbar),
            available: log.len(),
        });
    }
    let i = end_index - nbar;
    let n = nbar - p - s + 1;
    let u = &log.u()[..end_index];
    let y = &log.y()[..end_index];
    Ok(IvDataset {
        psi: psi(u, y, i, s, n, p)?,
        yf: block_hankel(y, i + p, s, n)?,
        instruments: None,
        i,
        p,
        s,
        n,
    })
}

/// Sample correlations with the instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct IvCorrelations {
    /// `Psi Z^T`
    pub sigma_psi_z: DMatrix<f64>,
    /// `Y_f Z^T`
    pub sigma_yz: DMatrix<f64>,
}

impl IvDataset {
    /// Replaces the default instruments `Z = Psi` by a user-supplied `n_z x N` matrix.
    pub fn with_instruments(mut self, z: DMatrix<f64>) -> Result<Self> {
        if z.ncols() != self.n {
            return Err(Error::dim(format!(
                "instrument matrix has {} columns, dataset has {}",
                z.ncols(),
                self.n
            )));
        }
        self.instruments = Some(z);
        Ok(self)
    }

    pub fn z(&self) -> &DMatrix<f64> {
        self.instruments.as_ref().unwrap_or(&self.psi.data)
    }

    pub fn instruments_are_psi(&self) -> bool {
        self.instruments.is_none()
    }

    pub fn r(&self) -> usize {
        self.psi.r
    }

    pub fn l(&self) -> usize {
        self.psi.l
    }

    pub fn correlations(&self) -> IvCorrelations {
        let zt = self.z().transpose();
        let mut sigma_psi_z = &self.psi.data * &zt;
        if self.instruments.is_none() {
            // exact symmetry for the default instruments
            let sym = (&sigma_psi_z + sigma_psi_z.transpose()) * 0.5;
            sigma_psi_z = sym;
        }
        IvCorrelations {
            sigma_yz: &self.yf.data * &zt,
            sigma_psi_z,
        }
    }

    /// `E_{i+p,s,N} Z^T`, the sample correlation of the innovation with the instruments.
    /// Requires the log the dataset was built from (with its noise record).
    pub fn noise_correlation(&self, log: &SignalLog) -> Result<DMatrix<f64>> {
        let ef = block_hankel(log.e(), self.i + self.p, self.s, self.n)?;
        Ok(&ef.data * self.z().transpose())
    }
}

/// `Sigma_yz Sigma_psiz^+`, the regression matrix mapping a `Psi` column to the outputs.
pub fn iv_regression(
    data: &IvDataset,
    opts: SolveOptions,
) -> Result<(DMatrix<f64>, SolveDiagnostics)> {
    let corr = data.correlations();
    solve_right(&corr.sigma_yz, &corr.sigma_psi_z, opts, data.i)
}

/// One-step predictor Markov parameters: `beta_1..beta_{p+1}` (each `l x r`) and
/// `theta_1..theta_p` (each `l x l`), oldest sample first.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepCoeffs {
    pub p: usize,
    pub r: usize,
    pub l: usize,
    pub beta: Vec<DMatrix<f64>>,
    pub theta: Vec<DMatrix<f64>>,
}

impl OneStepCoeffs {
    /// Unpacks an `l x ((p+1)r + pl)` regression row block.
    pub fn from_regression(m: &DMatrix<f64>, p: usize, r: usize, l: usize) -> Result<Self> {
        let width = (p + 1) * r + p * l;
        if m.shape() != (l, width) {
            return Err(Error::dim(format!(
                "one-step regression is {}x{}, expected {l}x{width}",
                m.nrows(),
                m.ncols()
            )));
        }
        let beta = (0..=p)
            .map(|j| m.columns(j * r, r).into_owned())
            .collect();
        let theta = (0..p)
            .map(|j| m.columns((p + 1) * r + j * l, l).into_owned())
            .collect();
        Ok(Self { p, r, l, beta, theta })
    }

    /// Inverse of [`OneStepCoeffs::from_regression`].
    pub fn to_regression(&self) -> DMatrix<f64> {
        let (p, r, l) = (self.p, self.r, self.l);
        let mut m = DMatrix::zeros(l, (p + 1) * r + p * l);
        for (j, b) in self.beta.iter().enumerate() {
            m.columns_mut(j * r, r).copy_from(b);
        }
        for (j, t) in self.theta.iter().enumerate() {
            m.columns_mut((p + 1) * r + j * l, l).copy_from(t);
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.beta
            .iter()
            .chain(self.theta.iter())
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepFit {
    pub coeffs: OneStepCoeffs,
    pub diagnostics: SolveDiagnostics,
}

/// One-step IV fit with the default (rejecting) conditioning policy.
pub fn fit_one_step(data: &IvDataset) -> Result<OneStepCoeffs> {
    fit_one_step_with(data, SolveOptions::default()).map(|fit| fit.coeffs)
}

pub fn fit_one_step_with(data: &IvDataset, opts: SolveOptions) -> Result<OneStepFit> {
    if data.s != 1 {
        return Err(Error::param(format!(
            "one-step fit needs block length 1, dataset has {}",
            data.s
        )));
    }
    let rows = data.psi.rows();
    if data.z().nrows() != rows {
        return Err(Error::dim(format!(
            "one-step fit needs a square correlation matrix: {} instruments for {rows} regressors",
            data.z().nrows()
        )));
    }
    let (m, diagnostics) = iv_regression(data, opts)?;
    let coeffs = OneStepCoeffs::from_regression(&m, data.p, data.r(), data.l())?;
    if !coeffs.is_finite() {
        return Err(Error::IllConditioned {
            window_start: data.i,
            condition: f64::INFINITY,
        });
    }
    Ok(OneStepFit { coeffs, diagnostics })
}
