use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use cldeepc_core::controller::{Controller, ControllerKind, ControllerStats};
use cldeepc_core::experiment::{
    make_controller, noise_input_correlation, run_tracking_with, toeplitz_bias, ExperimentConfig,
    TrackingRun,
};
use cldeepc_core::plant::{StateSpaceModel, StepContext};
use cldeepc_core::predictor::PredictorMatrices;
use cldeepc_core::qp::ControlDecision;

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Nbar,
    Noise,
    /// `p = f`
    Pf,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Nbar => "nbar",
            Axis::Noise => "noise",
            Axis::Pf => "pf",
        }
    }

    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let count = || -> Result<usize> {
            if value < 1.0 || value.fract() != 0.0 {
                bail!("{} must be a positive integer, got {value}", self.name());
            }
            Ok(value as usize)
        };
        match self {
            Axis::Nbar => cfg.nbar = count()?,
            Axis::Noise => cfg.noise_var = value,
            Axis::Pf => {
                cfg.p = count()?;
                cfg.f = cfg.p;
            }
        }
        Ok(cfg)
    }

    /// Current value of the swept parameter in `cfg`.
    pub fn value(self, cfg: &ExperimentConfig) -> f64 {
        match self {
            Axis::Nbar => cfg.nbar as f64,
            Axis::Noise => cfg.noise_var,
            Axis::Pf => cfg.p as f64,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nbar" => Axis::Nbar,
            "noise" | "noise_var" | "noise-var" => Axis::Noise,
            "pf" => Axis::Pf,
            _ => bail!("unknown axis '{s}' (expected nbar, noise or pf)"),
        })
    }
}

/// Controller wrapper accumulating wall-clock time spent per step.
pub struct TimedController {
    inner: Box<dyn Controller + Send>,
    total: Duration,
    calls: usize,
}

impl TimedController {
    pub fn new(inner: Box<dyn Controller + Send>) -> Self {
        Self {
            inner,
            total: Duration::ZERO,
            calls: 0,
        }
    }

    pub fn mean_ms(&self) -> Option<f64> {
        (self.calls > 0).then(|| self.total.as_secs_f64() * 1e3 / self.calls as f64)
    }
}

impl Controller for TimedController {
    fn control(&mut self, ctx: &StepContext<'_>) -> cldeepc_core::Result<DVector<f64>> {
        let t = Instant::now();
        let u = self.inner.control(ctx);
        self.total += t.elapsed();
        self.calls += 1;
        u
    }
    fn stats(&self) -> ControllerStats {
        self.inner.stats()
    }
    fn kind(&self) -> ControllerKind {
        self.inner.kind()
    }
    fn predictor(&self) -> Option<&PredictorMatrices> {
        self.inner.predictor()
    }
    fn last_decision(&self) -> Option<&ControlDecision> {
        self.inner.last_decision()
    }
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub kinds: Vec<ControllerKind>,
    /// Record wall-clock solve times (makes the output non-reproducible).
    pub timing: bool,
    /// Compute the noise-input correlation of every data-driven run.
    pub correlation: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            kinds: ControllerKind::ALL.to_vec(),
            timing: false,
            correlation: false,
        }
    }
}

/// Outcome of one (axis value, controller, realization) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub axis_value: f64,
    pub controller: ControllerKind,
    pub realization: usize,
    pub seed: u64,
    pub j_rms: Option<f64>,
    pub stats: ControllerStats,
    pub mean_solve_ms: Option<f64>,
    /// `||Gu - T^u_f||_F` of the final predictor.
    pub bias: Option<f64>,
    pub correlation: Option<DMatrix<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResults {
    pub axis: Option<Axis>,
    pub cells: Vec<CellResult>,
}

/// Runs one realization with an optionally timed controller.
pub fn run_cell(cfg: &ExperimentConfig, model: &StateSpaceModel, realization: usize, timing: bool) -> Result<(TrackingRun, Option<f64>)> {
    let inner = make_controller(cfg, model)?;
    if timing {
        let mut timed = TimedController::new(inner);
        let run = run_tracking_with(cfg, model, realization, &mut timed)?;
        Ok((run, timed.mean_ms()))
    } else {
        let mut inner = inner;
        let run = run_tracking_with(cfg, model, realization, inner.as_mut())?;
        Ok((run, None))
    }
}

/// Runs every (value, controller, realization) cell of the grid. Cells run in parallel;
/// results come back in grid order. A failed cell is recorded, not fatal.
pub fn run_grid(
    base: &ExperimentConfig,
    model: &StateSpaceModel,
    axis: Option<Axis>,
    values: &[f64],
    opts: &GridOptions,
) -> Result<GridResults> {
    let values: Vec<f64> = match axis {
        Some(_) if values.is_empty() => bail!("no axis values given"),
        Some(_) => values.to_vec(),
        None => vec![f64::NAN],
    };
    let mut jobs = Vec::new();
    let mut failed = Vec::new();
    for &value in &values {
        for &kind in &opts.kinds {
            let cfg = match axis {
                Some(a) => a.apply(base, value),
                None => Ok(base.clone()),
            }
            .and_then(|mut cfg| {
                cfg.controller = kind;
                cfg.validate()?;
                Ok(cfg)
            });
            match cfg {
                Ok(cfg) => {
                    let shown = axis.map_or(f64::NAN, |a| a.value(&cfg));
                    for i in 0..cfg.realizations {
                        jobs.push((shown, cfg.clone(), i));
                    }
                }
                Err(e) => {
                    for i in 0..base.realizations {
                        let mut c = empty_cell(value, kind, i, base.noise_seed(i));
                        c.error = Some(format!("{e:#}"));
                        failed.push(c);
                    }
                }
            }
        }
    }
    let mut cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|(value, cfg, i)| cell(*value, cfg, model, *i, opts))
        .collect();
    cells.extend(failed);
    cells.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then(a.controller.cmp(&b.controller))
            .then(a.realization.cmp(&b.realization))
    });
    Ok(GridResults { axis, cells })
}

fn empty_cell(value: f64, controller: ControllerKind, realization: usize, seed: u64) -> CellResult {
    CellResult {
        axis_value: value,
        controller,
        realization,
        seed,
        j_rms: None,
        stats: ControllerStats::default(),
        mean_solve_ms: None,
        bias: None,
        correlation: None,
        error: None,
    }
}

fn cell(value: f64, cfg: &ExperimentConfig, model: &StateSpaceModel, i: usize, opts: &GridOptions) -> CellResult {
    let mut out = empty_cell(value, cfg.controller, i, cfg.noise_seed(i));
    let run = match run_cell(cfg, model, i, opts.timing) {
        Ok((run, ms)) => {
            out.mean_solve_ms = ms;
            run
        }
        Err(e) => {
            out.error = Some(format!("{e:#}"));
            return out;
        }
    };
    out.j_rms = Some(run.j_rms);
    out.stats = run.stats;
    if let Some(pred) = &run.predictor {
        out.bias = toeplitz_bias(pred, model).ok();
    }
    if opts.correlation && cfg.controller != ControllerKind::Oracle {
        let f_id = cfg.controller.f_id(cfg.f);
        match noise_input_correlation(&run.log, run.closed_loop_start, cfg.p, f_id) {
            Ok(m) => out.correlation = Some(m),
            Err(e) => out.error = Some(format!("correlation: {e}")),
        }
    }
    out
}
