//! Block-Hankel data matrices, block-Toeplitz operators and the data equations.
//!
//! Hankel matrices carry the `1/sqrt(q)` column scaling; it is applied here and only here.

use alloc::format;
use alloc::vec::Vec;

use libm::sqrt;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{mat_pow, numerical_rank};
use crate::plant::{SignalLog, StateSpaceModel};

/// `[w_k; w_{k+1}; ...; w_{k+s-1}]`
pub fn data_vector(signal: &[DVector<f64>], k: usize, s: usize) -> Result<DVector<f64>> {
    if k + s > signal.len() {
        return Err(Error::InsufficientData {
            needed: k + s,
            available: signal.len(),
        });
    }
    let dim = signal.get(k).map_or(0, |w| w.len());
    let mut out = DVector::zeros(s * dim);
    for i in 0..s {
        out.rows_mut(i * dim, dim).copy_from(&signal[k + i]);
    }
    Ok(out)
}

/// Scaled block-Hankel matrix: column `j` is the data vector of length `s` starting at
/// `k + j`, all divided by `sqrt(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHankel {
    pub start: usize,
    pub block_rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub data: DMatrix<f64>,
}

pub fn block_hankel(signal: &[DVector<f64>], k: usize, s: usize, q: usize) -> Result<BlockHankel> {
    if s == 0 || q == 0 {
        return Err(Error::param("block rows and columns must be positive"));
    }
    let needed = k + s + q - 1;
    if needed > signal.len() {
        return Err(Error::InsufficientData {
            needed,
            available: signal.len(),
        });
    }
    let dim = signal[k].len();
    let scale = 1.0 / sqrt(q as f64);
    let mut data = DMatrix::zeros(s * dim, q);
    for j in 0..q {
        for i in 0..s {
            let w = &signal[k + i + j];
            for d in 0..dim {
                data[(i * dim + d, j)] = w[d] * scale;
            }
        }
    }
    Ok(BlockHankel {
        start: k,
        block_rows: s,
        cols: q,
        dim,
        data,
    })
}

impl BlockHankel {
    /// Block `(i, j)` as a `dim`-vector.
    pub fn block(&self, i: usize, j: usize) -> DVector<f64> {
        self.data.view((i * self.dim, j), (self.dim, 1)).column(0).into_owned()
    }

    /// Entrywise check of the constant-anti-diagonal structure.
    pub fn has_hankel_structure(&self) -> bool {
        for i in 1..self.block_rows {
            for j in 0..self.cols.saturating_sub(1) {
                if self.block(i, j) != self.block(i - 1, j + 1) {
                    return false;
                }
            }
        }
        true
    }
}

/// `[U_{k,p,q}; U_{k+p,s,q}; Y_{k,p,q}]` with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMatrix {
    pub k: usize,
    pub p: usize,
    pub s: usize,
    pub q: usize,
    pub r: usize,
    pub l: usize,
    pub data: DMatrix<f64>,
}

impl PsiMatrix {
    pub fn rows(&self) -> usize {
        (self.p + self.s) * self.r + self.p * self.l
    }
    pub fn past_inputs(&self) -> DMatrix<f64> {
        self.data.rows(0, self.p * self.r).into_owned()
    }
    pub fn future_inputs(&self) -> DMatrix<f64> {
        self.data.rows(self.p * self.r, self.s * self.r).into_owned()
    }
    pub fn past_outputs(&self) -> DMatrix<f64> {
        self.data
            .rows((self.p + self.s) * self.r, self.p * self.l)
            .into_owned()
    }
}

/// Stacks past inputs, future inputs and past outputs starting at `k`.
pub fn psi(
    u: &[DVector<f64>],
    y: &[DVector<f64>],
    k: usize,
    s: usize,
    q: usize,
    p: usize,
) -> Result<PsiMatrix> {
    if p == 0 {
        return Err(Error::param("past window length must be positive"));
    }
    let up = block_hankel(u, k, p, q)?;
    let uf = block_hankel(u, k + p, s, q)?;
    let yp = block_hankel(y, k, p, q)?;
    let (r, l) = (up.dim, yp.dim);
    let rows = (p + s) * r + p * l;
    let mut data = DMatrix::zeros(rows, q);
    data.rows_mut(0, p * r).copy_from(&up.data);
    data.rows_mut(p * r, s * r).copy_from(&uf.data);
    data.rows_mut((p + s) * r, p * l).copy_from(&yp.data);
    Ok(PsiMatrix {
        k,
        p,
        s,
        q,
        r,
        l,
        data,
    })
}

/// Lower block-triangular Toeplitz matrix with `dd` on the diagonal and
/// `cc * aa^(i-j-1) * bb` below it.
pub fn block_toeplitz(
    aa: &DMatrix<f64>,
    bb: &DMatrix<f64>,
    cc: &DMatrix<f64>,
    dd: &DMatrix<f64>,
    s: usize,
) -> Result<DMatrix<f64>> {
    let n = aa.nrows();
    if aa.ncols() != n || bb.nrows() != n || cc.ncols() != n {
        return Err(Error::dim("incompatible A, B, C in block-Toeplitz construction"));
    }
    let (rows, cols) = (cc.nrows(), bb.ncols());
    if dd.shape() != (rows, cols) {
        return Err(Error::dim(format!(
            "D must be {rows}x{cols}, got {}x{}",
            dd.nrows(),
            dd.ncols()
        )));
    }
    // markov[m] = C A^m B
    let mut markov = Vec::with_capacity(s);
    let mut ca = cc.clone();
    for _ in 0..s.saturating_sub(1) {
        markov.push(&ca * bb);
        ca = &ca * aa;
    }
    let mut t = DMatrix::zeros(s * rows, s * cols);
    for i in 0..s {
        t.view_mut((i * rows, i * cols), (rows, cols)).copy_from(dd);
        for j in 0..i {
            t.view_mut((i * rows, j * cols), (rows, cols))
                .copy_from(&markov[i - j - 1]);
        }
    }
    Ok(t)
}

/// `[C; CA; ...; CA^(s-1)]`
pub fn extended_observability(aa: &DMatrix<f64>, cc: &DMatrix<f64>, s: usize) -> Result<DMatrix<f64>> {
    if aa.nrows() != aa.ncols() || cc.ncols() != aa.nrows() {
        return Err(Error::dim("incompatible A, C in observability matrix"));
    }
    let rows = cc.nrows();
    let mut out = DMatrix::zeros(s * rows, aa.ncols());
    let mut ca = cc.clone();
    for i in 0..s {
        out.rows_mut(i * rows, rows).copy_from(&ca);
        ca = &ca * aa;
    }
    Ok(out)
}

/// Reversed controllability matrix `[A^(p-1) B, ..., A B, B]`.
pub fn extended_controllability(aa: &DMatrix<f64>, bb: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    if aa.nrows() != aa.ncols() || bb.nrows() != aa.nrows() {
        return Err(Error::dim("incompatible A, B in controllability matrix"));
    }
    let cols = bb.ncols();
    let mut out = DMatrix::zeros(aa.nrows(), p * cols);
    let mut ab = bb.clone();
    for j in (0..p).rev() {
        out.columns_mut(j * cols, cols).copy_from(&ab);
        ab = aa * &ab;
    }
    Ok(out)
}

/// Structured operators of a model for block length `s` and past window `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzSet {
    pub s: usize,
    pub p: usize,
    /// `T_s(A, B, C, D)`
    pub tu: DMatrix<f64>,
    /// `T_s(A~, B~, C, D)`
    pub tu_tilde: DMatrix<f64>,
    /// `T_s(A, K, C, I)`
    pub h: DMatrix<f64>,
    /// `T_s(A~, K, -C, I)`
    pub h_tilde: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub gamma_tilde: DMatrix<f64>,
    pub ku_tilde: DMatrix<f64>,
    pub ky_tilde: DMatrix<f64>,
    /// `[Gamma Ku~, T^u, Gamma Ky~]`
    pub l_s: DMatrix<f64>,
    /// `[Gamma~ Ku~, T~^u, Gamma~ Ky~]`
    pub l_s_tilde: DMatrix<f64>,
}

impl ToeplitzSet {
    pub fn new(model: &StateSpaceModel, s: usize, p: usize) -> Result<Self> {
        let eye_l = DMatrix::identity(model.l(), model.l());
        let neg_c = -model.c();
        let tu = block_toeplitz(model.a(), model.b(), model.c(), model.d(), s)?;
        let tu_tilde = block_toeplitz(model.a_tilde(), model.b_tilde(), model.c(), model.d(), s)?;
        let h = block_toeplitz(model.a(), model.k(), model.c(), &eye_l, s)?;
        let h_tilde = block_toeplitz(model.a_tilde(), model.k(), &neg_c, &eye_l, s)?;
        let gamma = extended_observability(model.a(), model.c(), s)?;
        let gamma_tilde = extended_observability(model.a_tilde(), model.c(), s)?;
        let ku_tilde = extended_controllability(model.a_tilde(), model.b_tilde(), p)?;
        let ky_tilde = extended_controllability(model.a_tilde(), model.k(), p)?;
        let l_s = hcat(&[&(&gamma * &ku_tilde), &tu, &(&gamma * &ky_tilde)]);
        let l_s_tilde = hcat(&[&(&gamma_tilde * &ku_tilde), &tu_tilde, &(&gamma_tilde * &ky_tilde)]);
        Ok(Self {
            s,
            p,
            tu,
            tu_tilde,
            h,
            h_tilde,
            gamma,
            gamma_tilde,
            ku_tilde,
            ky_tilde,
            l_s,
            l_s_tilde,
        })
    }
}

/// Horizontal concatenation.
pub fn hcat(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |m| m.nrows());
    let cols = parts.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for m in parts {
        out.columns_mut(at, m.ncols()).copy_from(*m);
        at += m.ncols();
    }
    out
}

/// Singular-value tolerance multiplier used by [`pe_order_check`].
pub const PE_RANK_TOLERANCE: f64 = 1.0;

/// Whether `signal` is persistently exciting of order `s` over `n_cols` columns
/// starting at sample 0.
pub fn pe_order_check(signal: &[DVector<f64>], s: usize, n_cols: usize) -> Result<bool> {
    pe_order_check_with(signal, s, n_cols, PE_RANK_TOLERANCE)
}

pub fn pe_order_check_with(
    signal: &[DVector<f64>],
    s: usize,
    n_cols: usize,
    tol_scale: f64,
) -> Result<bool> {
    let h = block_hankel(signal, 0, s, n_cols)?;
    Ok(numerical_rank(&h.data, tol_scale) == h.data.nrows())
}

/// Residuals of both data equations evaluated with the true model matrices.
///
/// `res1 = Y_f - L_s Psi - H_s E_f - Gamma_s A~^p X`,
/// `res2 = Y_f - L~_s Psi - E_f - (I - H~_s) Y_f - Gamma~_s A~^p X`.
pub fn data_equation_residual(
    model: &StateSpaceModel,
    log: &SignalLog,
    k: usize,
    s: usize,
    q: usize,
    p: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ops = ToeplitzSet::new(model, s, p)?;
    let ps = psi(log.u(), log.y(), k, s, q, p)?;
    let yf = block_hankel(log.y(), k + p, s, q)?;
    let ef = block_hankel(log.e(), k + p, s, q)?;
    let x0 = block_hankel(log.x(), k, 1, q)?;
    let ap = mat_pow(model.a_tilde(), p);
    let res1 = &yf.data - &ops.l_s * &ps.data - &ops.h * &ef.data - &ops.gamma * &ap * &x0.data;
    let eye = DMatrix::<f64>::identity(s * model.l(), s * model.l());
    let res2 = &yf.data
        - &ops.l_s_tilde * &ps.data
        - &ef.data
        - (eye - &ops.h_tilde) * &yf.data
        - &ops.gamma_tilde * &ap * &x0.data;
    Ok((res1, res2))
}
