//! Receding-horizon controllers driven by a sliding data window or by the true model.

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hankel::data_vector;
use crate::linalg::{RankPolicy, SolveOptions};
use crate::plant::{StateSpaceModel, StepContext};
use crate::predictor::{
    assemble_tilde, build_dataset, deepc_from_regression, fit_one_step_with, iv_regression, solve_final,
    PredictorMatrices,
};
use crate::qp::{
    build_tracking_qp, BoxConstraints, ControlDecision, ControllerWeights, OracleModel,
    SolveStatus, solve_with_softening,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    /// Sequential one-step IV predictors.
    ClDeepc,
    /// f-step IV predictor, non-causal future-input block.
    Deepc,
    /// Exact model and true state.
    Oracle,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [Self::ClDeepc, Self::Deepc, Self::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Self::Deepc => "deepc",
            Self::ClDeepc => "cl-deepc",
            Self::Oracle => "oracle",
        }
    }

    /// Block length of the regression: 1 for CL-DeePC, `f` for DeePC.
    pub fn f_id(self, f: usize) -> usize {
        match self {
            Self::ClDeepc => 1,
            _ => f,
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "deepc" => Ok(Self::Deepc),
            "cl-deepc" | "cldeepc" => Ok(Self::ClDeepc),
            "oracle" => Ok(Self::Oracle),
            _ => Err(Error::InvalidParameter(format!("unknown controller '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub p: usize,
    pub f: usize,
    pub nbar: usize,
    pub weights: ControllerWeights,
    pub constraints: BoxConstraints,
    pub qp_tol: f64,
    /// Condition-number limit of the correlation matrix.
    pub max_condition: f64,
    /// Behaviour above the limit; windows handled by a truncated pseudoinverse are counted.
    pub rank_policy: RankPolicy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControllerStats {
    pub steps: usize,
    /// Steps whose hard-constrained QP was infeasible.
    pub solve_failures: usize,
    /// Steps that reused the previous predictor because the fit failed.
    pub fallbacks: usize,
    /// Windows solved with a truncated pseudoinverse.
    pub rank_deficient_windows: usize,
}

pub trait Controller {
    /// Input for step `ctx.step`, computed from data of earlier steps.
    fn control(&mut self, ctx: &StepContext<'_>) -> Result<DVector<f64>>;
    fn stats(&self) -> ControllerStats;
    fn kind(&self) -> ControllerKind;
    /// Most recent horizon predictor (none for the oracle).
    fn predictor(&self) -> Option<&PredictorMatrices> {
        None
    }
    fn last_decision(&self) -> Option<&ControlDecision>;
}

/// Stacks the first `f` preview samples, repeating the last one if the preview is short.
pub fn reference_window(reference: &[DVector<f64>], f: usize, l: usize) -> Result<DVector<f64>> {
    let last = reference
        .last()
        .ok_or_else(|| Error::dim("empty reference preview"))?;
    let mut out = DVector::zeros(f * l);
    for k in 0..f {
        let rk = reference.get(k).unwrap_or(last);
        if rk.len() != l {
            return Err(Error::dim("reference sample has the wrong length"));
        }
        out.rows_mut(k * l, l).copy_from(rk);
    }
    Ok(out)
}

fn previous_input(ctx: &StepContext<'_>, r: usize) -> DVector<f64> {
    ctx.log
        .u()
        .last()
        .cloned()
        .unwrap_or_else(|| DVector::zeros(r))
}

/// CL-DeePC or DeePC with instruments, refitted on the latest `nbar` samples at every step.
#[derive(Debug, Clone)]
pub struct DataDrivenController {
    kind: ControllerKind,
    settings: ControllerSettings,
    predictor: Option<PredictorMatrices>,
    decision: Option<ControlDecision>,
    stats: ControllerStats,
    last_error: Option<String>,
}

impl DataDrivenController {
    pub fn new(kind: ControllerKind, settings: ControllerSettings) -> Result<Self> {
        if kind == ControllerKind::Oracle {
            return Err(Error::param("the oracle is not data-driven"));
        }
        let ControllerSettings { p, f, nbar, .. } = settings;
        if p == 0 || f == 0 {
            return Err(Error::param("p and f must be positive"));
        }
        if nbar < p + kind.f_id(f) {
            return Err(Error::WindowTooShort {
                nbar,
                required: p + kind.f_id(f),
            });
        }
        settings.weights.validate()?;
        settings.constraints.validate()?;
        Ok(Self {
            kind,
            settings,
            predictor: None,
            decision: None,
            stats: ControllerStats::default(),
            last_error: None,
        })
    }

    pub fn settings(&self) -> &ControllerSettings {
        &self.settings
    }

    /// Message of the most recent fit failure that triggered a fallback.
    pub fn last_error(&self) -> Option<&str> {
        self.last_error.as_deref()
    }

    /// Fits the horizon predictor on samples `[end - nbar, end)`.
    pub fn fit(&self, log: &crate::plant::SignalLog, end: usize) -> Result<(PredictorMatrices, bool)> {
        let s = &self.settings;
        let opts = SolveOptions {
            max_condition: s.max_condition,
            policy: s.rank_policy,
        };
        let data = build_dataset(log, end, s.nbar, s.p, self.kind.f_id(s.f))?;
        let (pred, truncated) = match self.kind {
            ControllerKind::ClDeepc => {
                let fit = fit_one_step_with(&data, opts)?;
                let tilde = assemble_tilde(&fit.coeffs, s.f)?;
                (solve_final(&tilde), fit.diagnostics.truncated)
            }
            _ => {
                let (m, diag) = iv_regression(&data, opts)?;
                (deepc_from_regression(&m, &data)?, diag.truncated)
            }
        };
        if !pred.is_finite() {
            return Err(Error::IllConditioned {
                window_start: data.i,
                condition: f64::INFINITY,
            });
        }
        Ok((pred, truncated))
    }
}

impl Controller for DataDrivenController {
    fn control(&mut self, ctx: &StepContext<'_>) -> Result<DVector<f64>> {
        let k = ctx.step;
        let log = ctx.log;
        let (p, f) = (self.settings.p, self.settings.f);
        if k != log.len() || k < self.settings.nbar || k < p {
            return Err(Error::InsufficientData {
                needed: self.settings.nbar.max(p),
                available: log.len(),
            });
        }
        match self.fit(log, k) {
            Ok((pred, truncated)) => {
                if truncated {
                    self.stats.rank_deficient_windows += 1;
                }
                self.predictor = Some(pred);
            }
            Err(e) if self.predictor.is_some() => {
                self.stats.fallbacks += 1;
                self.last_error = Some(format!("{e}"));
            }
            Err(e) => return Err(e),
        }
        let pred = self.predictor.as_ref().expect("predictor fitted");
        let u_past = data_vector(log.u(), k - p, p)?;
        let y_past = data_vector(log.y(), k - p, p)?;
        let reference = reference_window(ctx.reference, f, pred.l)?;
        let u_prev = previous_input(ctx, pred.r);
        let qp = build_tracking_qp(
            pred,
            &u_past,
            &y_past,
            &reference,
            &self.settings.weights,
            &self.settings.constraints,
            &u_prev,
        )?;
        let decision = solve_with_softening(&qp, self.settings.qp_tol)?;
        if decision.status != SolveStatus::Hard {
            self.stats.solve_failures += 1;
        }
        self.stats.steps += 1;
        let u = decision.u_next.clone();
        self.decision = Some(decision);
        Ok(u)
    }

    fn stats(&self) -> ControllerStats {
        self.stats
    }

    fn kind(&self) -> ControllerKind {
        self.kind
    }

    fn predictor(&self) -> Option<&PredictorMatrices> {
        self.predictor.as_ref()
    }

    fn last_decision(&self) -> Option<&ControlDecision> {
        self.decision.as_ref()
    }
}

/// MPC with the exact system matrices and the true state; no noise model.
#[derive(Debug, Clone)]
pub struct OracleController {
    model: OracleModel,
    settings: ControllerSettings,
    l: usize,
    r: usize,
    decision: Option<ControlDecision>,
    stats: ControllerStats,
}

impl OracleController {
    pub fn new(model: &StateSpaceModel, settings: ControllerSettings) -> Result<Self> {
        settings.weights.validate()?;
        settings.constraints.validate()?;
        Ok(Self {
            model: OracleModel::new(model, settings.f)?,
            settings,
            l: model.l(),
            r: model.r(),
            decision: None,
            stats: ControllerStats::default(),
        })
    }
}

impl Controller for OracleController {
    fn control(&mut self, ctx: &StepContext<'_>) -> Result<DVector<f64>> {
        let reference = reference_window(ctx.reference, self.settings.f, self.l)?;
        let u_prev = previous_input(ctx, self.r);
        let decision = self.model.step(
            ctx.state,
            &reference,
            &self.settings.weights,
            &self.settings.constraints,
            &u_prev,
            self.settings.qp_tol,
        )?;
        if decision.status != SolveStatus::Hard {
            self.stats.solve_failures += 1;
        }
        self.stats.steps += 1;
        let u = decision.u_next.clone();
        self.decision = Some(decision);
        Ok(u)
    }

    fn stats(&self) -> ControllerStats {
        self.stats
    }

    fn kind(&self) -> ControllerKind {
        ControllerKind::Oracle
    }

    fn last_decision(&self) -> Option<&ControlDecision> {
        self.decision.as_ref()
    }
}
