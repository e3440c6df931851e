//! Receding-horizon tracking QP in condensed form over the future inputs.

pub mod solver;

use alloc::format;
use core::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::{block_toeplitz, extended_observability};
use crate::plant::StateSpaceModel;
use crate::predictor::PredictorMatrices;

pub use solver::{kkt_residuals, solve_dense_qp, KktResiduals, QpSolution};

/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerWeights {
    /// `fl x fl`
    pub q: DMatrix<f64>,
    /// `fr x fr`
    pub r: DMatrix<f64>,
    /// `fr x fr`, weight on input increments
    pub r_delta: DMatrix<f64>,
    pub lambda_slack: f64,
}

impl ControllerWeights {
    /// Scalar weights repeated over a horizon of `f` steps.
    pub fn diagonal(q: f64, r: f64, r_delta: f64, lambda_slack: f64, f: usize, r_dim: usize, l_dim: usize) -> Self {
        Self {
            q: DMatrix::identity(f * l_dim, f * l_dim) * q,
            r: DMatrix::identity(f * r_dim, f * r_dim) * r,
            r_delta: DMatrix::identity(f * r_dim, f * r_dim) * r_delta,
            lambda_slack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let psd = |m: &DMatrix<f64>, strict: bool| {
            if !m.is_square() || (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                return false;
            }
            if m.nrows() == 0 {
                return true;
            }
            let min = m.clone().symmetric_eigenvalues().min();
            if strict { min > 0.0 } else { min >= -1e-12 * (1.0 + m.abs().max()) }
        };
        if !psd(&self.q, false) {
            return Err(Error::param("Q must be symmetric positive semi-definite"));
        }
        if !psd(&self.r, false) {
            return Err(Error::param("R must be symmetric positive semi-definite"));
        }
        if !psd(&self.r_delta, true) {
            return Err(Error::param("R_delta must be symmetric positive definite"));
        }
        if !(self.lambda_slack > 0.0) {
            return Err(Error::param("slack weight must be positive"));
        }
        if self.r.shape() != self.r_delta.shape() {
            return Err(Error::dim("R and R_delta differ in size"));
        }
        Ok(())
    }
}

/// Per-channel bounds `|u_k - u_{k-1}| <= du_max`, `|u_k| <= u_max`, `|y_k| <= y_max`.
/// Infinite bounds produce no constraint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    pub du_max: DVector<f64>,
    pub u_max: DVector<f64>,
    pub y_max: DVector<f64>,
}

impl BoxConstraints {
    pub fn uniform(du_max: f64, u_max: f64, y_max: f64, r: usize, l: usize) -> Self {
        Self {
            du_max: DVector::from_element(r, du_max),
            u_max: DVector::from_element(r, u_max),
            y_max: DVector::from_element(l, y_max),
        }
    }

    pub fn unbounded(r: usize, l: usize) -> Self {
        Self::uniform(f64::INFINITY, f64::INFINITY, f64::INFINITY, r, l)
    }

    /// Input bounds must be positive; the output bound may be zero.
    pub fn validate(&self) -> Result<()> {
        if self.du_max.iter().chain(self.u_max.iter()).any(|v| !(*v > 0.0)) {
            return Err(Error::param("input and rate bounds must be positive"));
        }
        if self.y_max.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::param("output bound must be non-negative"));
        }
        Ok(())
    }
}

/// `min 1/2 x'Hx + g'x s.t. A x <= b` over `x = [u_f; slacks]`.
///
/// Slack variables are stored scaled by `sqrt(lambda)` so their Hessian block is `2 I`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Cost terms independent of `x`, so that `1/2 x'Hx + g'x + constant` is the tracking cost.
    pub constant: f64,
    pub n_inputs: usize,
    pub r: usize,
    pub l: usize,
    /// Predicted output `offset + gu u_f`.
    pub offset: DVector<f64>,
    pub gu: DMatrix<f64>,
    pub rate_rows: Range<usize>,
    pub input_rows: Range<usize>,
    pub output_rows: Range<usize>,
    pub output_slacks: usize,
    pub rate_slacks: usize,
    pub lambda_slack: f64,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Hard,
    SoftOutput,
    SoftOutputAndRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u_next: DVector<f64>,
    pub u_plan: DVector<f64>,
    pub y_pred: DVector<f64>,
    pub status: SolveStatus,
    /// Euclidean norms of the (unscaled) slack vectors.
    pub output_slack_norm: f64,
    pub rate_slack_norm: f64,
    pub cost: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

/// Tracking QP for the prediction `y = offset + gu u_f`.
pub fn build_tracking_qp_affine(
    offset: &DVector<f64>,
    gu: &DMatrix<f64>,
    reference: &DVector<f64>,
    weights: &ControllerWeights,
    constraints: &BoxConstraints,
    u_prev: &DVector<f64>,
) -> Result<QpProblem> {
    let (fl, fr) = gu.shape();
    let r = u_prev.len();
    let l = constraints.y_max.len();
    if r == 0 || l == 0 || fr % r != 0 || fl % l != 0 || fr / r != fl / l {
        return Err(Error::dim(format!(
            "prediction matrix {fl}x{fr} does not match {r} inputs and {l} outputs"
        )));
    }
    let f = fr / r;
    if offset.len() != fl
        || reference.len() != fl
        || weights.q.shape() != (fl, fl)
        || weights.r.shape() != (fr, fr)
        || weights.r_delta.shape() != (fr, fr)
        || constraints.du_max.len() != r
        || constraints.u_max.len() != r
    {
        return Err(Error::dim("tracking QP data do not match the horizon"));
    }
    weights.validate()?;
    constraints.validate()?;

    // increments D u - d0
    let mut diff = DMatrix::identity(fr, fr);
    for k in 1..f {
        for c in 0..r {
            diff[(k * r + c, (k - 1) * r + c)] = -1.0;
        }
    }
    let mut d0 = DVector::zeros(fr);
    d0.rows_mut(0, r).copy_from(u_prev);

    let err0 = offset - reference;
    let qg = &weights.q * gu;
    let rd_d = &weights.r_delta * &diff;
    let mut h = (gu.transpose() * &qg + &weights.r + diff.transpose() * &rd_d) * 2.0;
    h = (&h + h.transpose()) * 0.5;
    let g = (qg.transpose() * &err0 - rd_d.transpose() * &d0) * 2.0;
    let constant = err0.dot(&(&weights.q * &err0)) + d0.dot(&(&weights.r_delta * &d0));

    let mut rows: alloc::vec::Vec<(DVector<f64>, f64)> = alloc::vec::Vec::new();
    let push_pair = |rows: &mut alloc::vec::Vec<(DVector<f64>, f64)>, m: &DMatrix<f64>, shift: &DVector<f64>, bound: &dyn Fn(usize) -> f64| {
        for sign in [1.0, -1.0] {
            for i in 0..m.nrows() {
                let bd = bound(i);
                if bd.is_finite() {
                    rows.push((m.row(i).transpose() * sign, bd - sign * shift[i]));
                }
            }
        }
    };
    let start = rows.len();
    push_pair(&mut rows, &diff, &(-&d0), &|i| constraints.du_max[i % r]);
    let rate_rows = start..rows.len();
    let start = rows.len();
    push_pair(&mut rows, &DMatrix::identity(fr, fr), &DVector::zeros(fr), &|i| constraints.u_max[i % r]);
    let input_rows = start..rows.len();
    let start = rows.len();
    push_pair(&mut rows, gu, offset, &|i| constraints.y_max[i % l]);
    let output_rows = start..rows.len();

    let mut a = DMatrix::zeros(rows.len(), fr);
    let mut b = DVector::zeros(rows.len());
    for (i, (row, bd)) in rows.into_iter().enumerate() {
        a.set_row(i, &row.transpose());
        b[i] = bd;
    }
    Ok(QpProblem {
        h,
        g,
        a,
        b,
        constant,
        n_inputs: fr,
        r,
        l,
        offset: offset.clone(),
        gu: gu.clone(),
        rate_rows,
        input_rows,
        output_rows,
        output_slacks: 0,
        rate_slacks: 0,
        lambda_slack: weights.lambda_slack,
    })
}

/// Tracking QP for a data-driven predictor with past window `(u_past, y_past)`.
#[allow(clippy::too_many_arguments)]
pub fn build_tracking_qp(
    predictor: &PredictorMatrices,
    u_past: &DVector<f64>,
    y_past: &DVector<f64>,
    reference: &DVector<f64>,
    weights: &ControllerWeights,
    constraints: &BoxConstraints,
    u_prev: &DVector<f64>,
) -> Result<QpProblem> {
    let offset = predictor.free_response(u_past, y_past)?;
    build_tracking_qp_affine(&offset, &predictor.gu, reference, weights, constraints, u_prev)
}

fn decision(problem: &QpProblem, sol: &QpSolution, status: SolveStatus) -> ControlDecision {
    let n = problem.n_inputs;
    let u_plan = sol.x.rows(0, n).into_owned();
    let scale = libm::sqrt(problem.lambda_slack);
    let os = sol.x.rows(n, problem.output_slacks).norm() / scale;
    let rs = sol.x.rows(n + problem.output_slacks, problem.rate_slacks).norm() / scale;
    ControlDecision {
        u_next: u_plan.rows(0, problem.r).into_owned(),
        y_pred: &problem.offset + &problem.gu * &u_plan,
        u_plan,
        status,
        output_slack_norm: os,
        rate_slack_norm: rs,
        cost: sol.objective + problem.constant,
        iterations: sol.iterations,
        kkt: kkt_residuals(&problem.h, &problem.g, &problem.a, &problem.b, &sol.x, &sol.multipliers),
    }
}

/// Solves the problem as posed; [`Error::Infeasible`] signals that softening is needed.
pub fn solve_qp(problem: &QpProblem, tol: f64) -> Result<ControlDecision> {
    let sol = solve_dense_qp(&problem.h, &problem.g, &problem.a, &problem.b, tol)?;
    let status = match (problem.output_slacks, problem.rate_slacks) {
        (0, 0) => SolveStatus::Hard,
        (_, 0) => SolveStatus::SoftOutput,
        _ => SolveStatus::SoftOutputAndRate,
    };
    Ok(decision(problem, &sol, status))
}

/// Adds one non-negative slack per row in `rows`, penalized by `lambda * s^2`.
fn with_slacks(problem: &QpProblem, rows: Range<usize>) -> QpProblem {
    let k = rows.len();
    let n_old = problem.dim();
    let n = n_old + k;
    let m_old = problem.a.nrows();
    let inv_scale = 1.0 / libm::sqrt(problem.lambda_slack);
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (n_old, n_old)).copy_from(&problem.h);
    for i in n_old..n {
        h[(i, i)] = 2.0;
    }
    let mut g = DVector::zeros(n);
    g.rows_mut(0, n_old).copy_from(&problem.g);
    let mut a = DMatrix::zeros(m_old + k, n);
    a.view_mut((0, 0), (m_old, n_old)).copy_from(&problem.a);
    let mut b = DVector::zeros(m_old + k);
    b.rows_mut(0, m_old).copy_from(&problem.b);
    for (j, row) in rows.enumerate() {
        a[(row, n_old + j)] = -inv_scale;
        a[(m_old + j, n_old + j)] = -1.0;
    }
    QpProblem { h, g, a, b, ..problem.clone() }
}

/// Relaxes the output bounds with slacks and, if that is still infeasible, the rate bounds too.
pub fn soften_and_resolve(problem: &QpProblem, lambda_slack: f64, tol: f64) -> Result<ControlDecision> {
    if !(lambda_slack > 0.0) {
        return Err(Error::param("slack weight must be positive"));
    }
    let base = QpProblem { lambda_slack, ..problem.clone() };
    let mut soft = with_slacks(&base, base.output_rows.clone());
    soft.output_slacks = base.output_rows.len();
    match solve_qp(&soft, tol) {
        Err(Error::Infeasible) => {}
        other => return other,
    }
    let mut softer = with_slacks(&soft, base.rate_rows.clone());
    softer.rate_slacks = base.rate_rows.len();
    solve_qp(&softer, tol)
}

/// Hard solve first, softening only if the hard problem is infeasible.
pub fn solve_with_softening(problem: &QpProblem, tol: f64) -> Result<ControlDecision> {
    match solve_qp(problem, tol) {
        Err(Error::Infeasible) => soften_and_resolve(problem, problem.lambda_slack, tol),
        other => other,
    }
}

/// Exact-model prediction matrices `Gamma_f` and `T^u_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    pub gamma: DMatrix<f64>,
    pub tu: DMatrix<f64>,
}

impl OracleModel {
    pub fn new(model: &StateSpaceModel, f: usize) -> Result<Self> {
        Ok(Self {
            gamma: extended_observability(model.a(), model.c(), f)?,
            tu: block_toeplitz(model.a(), model.b(), model.c(), model.d(), f)?,
        })
    }

    pub fn step(
        &self,
        x_hat: &DVector<f64>,
        reference: &DVector<f64>,
        weights: &ControllerWeights,
        constraints: &BoxConstraints,
        u_prev: &DVector<f64>,
        tol: f64,
    ) -> Result<ControlDecision> {
        if x_hat.len() != self.gamma.ncols() {
            return Err(Error::dim("state estimate has the wrong length"));
        }
        let offset = &self.gamma * x_hat;
        let qp = build_tracking_qp_affine(&offset, &self.tu, reference, weights, constraints, u_prev)?;
        solve_with_softening(&qp, tol)
    }
}

/// One oracle MPC move from the true state, without a noise model.
pub fn oracle_mpc_step(
    model: &StateSpaceModel,
    x_hat: &DVector<f64>,
    reference: &DVector<f64>,
    weights: &ControllerWeights,
    constraints: &BoxConstraints,
    u_prev: &DVector<f64>,
) -> Result<ControlDecision> {
    let f = reference.len() / model.l();
    OracleModel::new(model, f)?.step(x_hat, reference, weights, constraints, u_prev, DEFAULT_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(offset: f64, g: f64, r: f64, cons: BoxConstraints, u_prev: f64) -> QpProblem {
        build_tracking_qp_affine(
            &DVector::from_element(1, offset),
            &DMatrix::from_element(1, 1, g),
            &DVector::from_element(1, r),
            &ControllerWeights::diagonal(100.0, 0.0, 10.0, 1e15, 1, 1, 1),
            &cons,
            &DVector::from_element(1, u_prev),
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_scalar_minimizer() {
        let qp = scalar(0.0, 1.0, 1.0, BoxConstraints::uniform(1e3, 1e3, 1e3, 1, 1), 0.0);
        let d = solve_with_softening(&qp, DEFAULT_TOL).unwrap();
        assert!((d.u_next[0] - 100.0 / 110.0).abs() < 1e-12);
        assert_eq!(d.status, SolveStatus::Hard);
        assert_eq!(d.output_slack_norm, 0.0);
    }

    #[test]
    fn reference_at_current_prediction_keeps_input() {
        let qp = scalar(1.0, 2.0, 1.0 + 2.0 * 0.7, BoxConstraints::unbounded(1, 1), 0.7);
        let d = solve_qp(&qp, DEFAULT_TOL).unwrap();
        assert!((d.u_next[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn active_output_bound() {
        let qp = scalar(0.0, 1.0, 1.0, BoxConstraints::uniform(1e3, 1e3, 0.5, 1, 1), 0.0);
        let d = solve_qp(&qp, DEFAULT_TOL).unwrap();
        assert!((d.u_next[0] - 0.5).abs() < 1e-12);
        assert!(d.kkt.max() < 1e-9);
    }

    #[test]
    fn slack_absorbs_forced_violation() {
        // y = 5 + u with |u| <= 1 cannot reach |y| <= 0
        let qp = scalar(5.0, 1.0, 0.0, BoxConstraints::uniform(1e3, 1.0, 0.0, 1, 1), 0.0);
        assert!(matches!(solve_qp(&qp, DEFAULT_TOL), Err(Error::Infeasible)));
        let d = solve_with_softening(&qp, DEFAULT_TOL).unwrap();
        assert_eq!(d.status, SolveStatus::SoftOutput);
        assert!((d.u_next[0] + 1.0).abs() < 1e-6);
        assert!((d.output_slack_norm - 4.0).abs() < 1e-6);
    }

    #[test]
    fn rate_slack_when_output_slack_is_not_enough() {
        // |u| <= 1 and |u - u_prev| <= 0.5 with u_prev = 3 contradict each other
        let qp = scalar(0.0, 1.0, 0.0, BoxConstraints::uniform(0.5, 1.0, 10.0, 1, 1), 3.0);
        let d = solve_with_softening(&qp, DEFAULT_TOL).unwrap();
        assert_eq!(d.status, SolveStatus::SoftOutputAndRate);
        assert!((d.u_next[0] - 1.0).abs() < 1e-6);
        assert!((d.rate_slack_norm - 1.5).abs() < 1e-6);
    }

    #[test]
    fn oracle_at_rest_stays_at_rest() {
        let model = StateSpaceModel::benchmark();
        let d = oracle_mpc_step(
            &model,
            &DVector::zeros(5),
            &DVector::zeros(20),
            &ControllerWeights::diagonal(100.0, 0.0, 10.0, 1e15, 20, 1, 1),
            &BoxConstraints::uniform(3.75, 15.0, 1000.0, 1, 1),
            &DVector::zeros(1),
        )
        .unwrap();
        assert!(d.u_plan.abs().max() < 1e-12);
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut w = ControllerWeights::diagonal(1.0, 0.0, 1.0, 1.0, 1, 1, 1);
        w.r_delta[(0, 0)] = 0.0;
        assert!(w.validate().is_err());
        assert!(BoxConstraints::uniform(0.0, 1.0, 1.0, 1, 1).validate().is_err());
    }
}
