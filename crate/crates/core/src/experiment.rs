//! Closed-loop tracking experiments and their statistics.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::controller::{
    Controller, ControllerKind, ControllerSettings, ControllerStats, DataDrivenController,
    OracleController,
};
use crate::error::{Error, Result};
use crate::hankel::{block_hankel, block_toeplitz};
use crate::linalg::RankPolicy;
use crate::plant::{NoiseProcess, SignalLog, Simulator, StateSpaceModel};
use crate::predictor::PredictorMatrices;
use crate::qp::{BoxConstraints, ControllerWeights, DEFAULT_TOL};

/// Offset between the noise seed and the open-loop input seed of a realization.
pub const INPUT_SEED_OFFSET: u64 = 1_000_000;

/// Square-wave levels and period.
pub const REFERENCE_HIGH: f64 = 100.0;
pub const REFERENCE_PERIOD: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub controller: ControllerKind,
    pub nbar: usize,
    pub p: usize,
    pub f: usize,
    pub q_weight: f64,
    pub r_weight: f64,
    pub r_delta_weight: f64,
    pub lambda_slack: f64,
    pub du_max: f64,
    pub u_max: f64,
    pub y_max: f64,
    pub noise_var: f64,
    pub input_var: f64,
    pub steps: usize,
    pub realizations: usize,
    pub seed: u64,
    pub max_condition: f64,
    pub qp_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::ClDeepc,
            nbar: 500,
            p: 20,
            f: 20,
            q_weight: 100.0,
            r_weight: 0.0,
            r_delta_weight: 10.0,
            lambda_slack: 1e15,
            du_max: 3.75,
            u_max: 15.0,
            y_max: 1000.0,
            noise_var: 1.0,
            input_var: 1.0,
            steps: 1800,
            realizations: 20,
            seed: 0,
            max_condition: 1e12,
            qp_tol: DEFAULT_TOL,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.f == 0 {
            return Err(Error::param("p and f must be positive"));
        }
        if self.nbar < self.p + self.f + 1 {
            return Err(Error::WindowTooShort {
                nbar: self.nbar,
                required: self.p + self.f + 1,
            });
        }
        if self.steps == 0 {
            return Err(Error::param("steps must be positive"));
        }
        if self.realizations == 0 {
            return Err(Error::param("realizations must be positive"));
        }
        if !(self.noise_var >= 0.0) || !(self.input_var >= 0.0) {
            return Err(Error::param("variances must be non-negative"));
        }
        if !(self.max_condition > 1.0) || !(self.qp_tol > 0.0) {
            return Err(Error::param("max_condition must exceed 1 and qp_tol be positive"));
        }
        Ok(())
    }

    pub fn noise_seed(&self, realization: usize) -> u64 {
        self.seed.wrapping_add(realization as u64)
    }

    pub fn input_seed(&self, realization: usize) -> u64 {
        self.seed
            .wrapping_add(INPUT_SEED_OFFSET)
            .wrapping_add(realization as u64)
    }

    pub fn controller_settings(&self, r: usize, l: usize) -> ControllerSettings {
        ControllerSettings {
            p: self.p,
            f: self.f,
            nbar: self.nbar,
            weights: ControllerWeights::diagonal(
                self.q_weight,
                self.r_weight,
                self.r_delta_weight,
                self.lambda_slack,
                self.f,
                r,
                l,
            ),
            constraints: BoxConstraints::uniform(self.du_max, self.u_max, self.y_max, r, l),
            qp_tol: self.qp_tol,
            max_condition: self.max_condition,
            rank_policy: RankPolicy::MinimumNorm,
        }
    }
}

/// `0/100` square wave with period 200, high for the first half period.
pub fn square_wave_reference(steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|k| {
            if (k % REFERENCE_PERIOD) < REFERENCE_PERIOD / 2 {
                REFERENCE_HIGH
            } else {
                0.0
            }
        })
        .collect()
}

/// `sqrt(sum (y - r)^2 / sum r^2)` over samples after the first `skip`.
pub fn j_rms(y: &[f64], r: &[f64], skip: usize) -> Result<f64> {
    if y.len() != r.len() {
        return Err(Error::dim(format!("{} outputs for {} references", y.len(), r.len())));
    }
    if skip >= y.len() {
        return Err(Error::InsufficientData {
            needed: skip + 1,
            available: y.len(),
        });
    }
    let (mut err, mut energy) = (0.0, 0.0);
    for (yk, rk) in y[skip..].iter().zip(&r[skip..]) {
        err += (yk - rk) * (yk - rk);
        energy += rk * rk;
    }
    if energy <= 0.0 {
        return Err(Error::ZeroReferenceEnergy);
    }
    Ok(libm::sqrt(err / energy))
}

/// Percentile `q` in `[0, 100]` with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&q) || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q / 100.0;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 50.0)
}

/// One realization: open-loop data collection followed by closed-loop tracking.
#[derive(Debug, Clone)]
pub struct TrackingRun {
    pub kind: ControllerKind,
    pub realization: usize,
    pub noise_seed: u64,
    pub input_seed: u64,
    pub log: SignalLog,
    /// Index of the first closed-loop sample in `log`.
    pub closed_loop_start: usize,
    pub j_rms: f64,
    pub stats: ControllerStats,
    /// Predictor fitted at the final closed-loop step.
    pub predictor: Option<PredictorMatrices>,
}

pub fn make_controller(config: &ExperimentConfig, model: &StateSpaceModel) -> Result<Box<dyn Controller + Send>> {
    let settings = config.controller_settings(model.r(), model.l());
    Ok(match config.controller {
        ControllerKind::Oracle => Box::new(OracleController::new(model, settings)?),
        kind => Box::new(DataDrivenController::new(kind, settings)?),
    })
}

pub fn run_tracking(config: &ExperimentConfig, model: &StateSpaceModel, realization: usize) -> Result<TrackingRun> {
    let mut controller = make_controller(config, model)?;
    run_tracking_with(config, model, realization, controller.as_mut())
}

/// Runs one realization with a caller-supplied controller (e.g. an instrumented one).
pub fn run_tracking_with(
    config: &ExperimentConfig,
    model: &StateSpaceModel,
    realization: usize,
    controller: &mut dyn Controller,
) -> Result<TrackingRun> {
    config.validate()?;
    let (r, l) = (model.r(), model.l());
    let noise = NoiseProcess::isotropic(config.noise_seed(realization), l, config.noise_var);
    let mut inputs = NoiseProcess::isotropic(config.input_seed(realization), r, config.input_var).stream()?;
    let mut sim = Simulator::new(model.clone(), &noise, DVector::zeros(model.n()))?;
    let zero_r = DVector::zeros(l);
    for _ in 0..config.nbar {
        sim.step(inputs.sample(), zero_r.clone())?;
    }
    let reference: Vec<DVector<f64>> = square_wave_reference(config.steps + config.f)
        .into_iter()
        .map(|v| DVector::from_element(l, v))
        .collect();
    let mut step = |ctx: &crate::plant::StepContext<'_>| controller.control(ctx);
    sim.run_closed_loop(&mut step, &reference, config.steps)?;
    let log = sim.into_log();
    let start = config.nbar;
    let j = j_rms_multi(&log, start, config.nbar)?;
    Ok(TrackingRun {
        kind: controller.kind(),
        realization,
        noise_seed: config.noise_seed(realization),
        input_seed: config.input_seed(realization),
        closed_loop_start: start,
        j_rms: j,
        stats: controller.stats(),
        predictor: controller.predictor().cloned(),
        log,
    })
}

/// `J_rms` over all output channels of the closed-loop part of `log`, skipping `skip` steps.
pub fn j_rms_multi(log: &SignalLog, start: usize, skip: usize) -> Result<f64> {
    let y: Vec<f64> = log.y()[start..].iter().flat_map(|v| v.iter().copied()).collect();
    let r: Vec<f64> = log.r()[start..].iter().flat_map(|v| v.iter().copied()).collect();
    let l = log.y().first().map_or(1, |v| v.len());
    j_rms(&y, &r, skip * l)
}

/// `||Gu - T^u_f||_F` for the future-input block of a fitted predictor.
pub fn toeplitz_bias(predictor: &PredictorMatrices, model: &StateSpaceModel) -> Result<f64> {
    let tu = block_toeplitz(model.a(), model.b(), model.c(), model.d(), predictor.f)?;
    if tu.shape() != predictor.gu.shape() {
        return Err(Error::dim("predictor horizon does not match the model"));
    }
    Ok((&predictor.gu - tu).norm())
}

/// Mean and standard error of `E_{i+p,f_id,N} [U_{i,p,N}; U_{i+p,f_id,N}]^T` over realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSummary {
    pub mean: DMatrix<f64>,
    pub std_err: DMatrix<f64>,
    pub realizations: usize,
    pub columns: usize,
}

impl CorrelationSummary {
    /// Largest `|mean| / std_err` over all entries.
    pub fn max_z_score(&self) -> f64 {
        self.mean
            .iter()
            .zip(self.std_err.iter())
            .map(|(m, s)| if *s > 0.0 { m.abs() / s } else if *m == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Noise-input correlation of one log, over samples `[start, len)`.
pub fn noise_input_correlation(log: &SignalLog, start: usize, p: usize, f_id: usize) -> Result<DMatrix<f64>> {
    let len = log.len();
    if len < start + p + f_id {
        return Err(Error::InsufficientData {
            needed: start + p + f_id,
            available: len,
        });
    }
    let n = len - start - p - f_id + 1;
    let ef = block_hankel(log.e(), start + p, f_id, n)?;
    let u = block_hankel(log.u(), start, p + f_id, n)?;
    Ok(&ef.data * u.data.transpose())
}

pub fn correlation_analysis(logs: &[SignalLog], start: usize, p: usize, f_id: usize) -> Result<CorrelationSummary> {
    let mats = logs
        .iter()
        .map(|log| noise_input_correlation(log, start, p, f_id))
        .collect::<Result<Vec<_>>>()?;
    let columns = logs.first().map_or(0, |log| log.len() - start - p - f_id + 1);
    summarize_correlations(&mats, columns)
}

/// Entrywise mean and standard error of per-realization correlation matrices.
pub fn summarize_correlations(mats: &[DMatrix<f64>], columns: usize) -> Result<CorrelationSummary> {
    let first = mats
        .first()
        .ok_or_else(|| Error::param("no realizations for the correlation analysis"))?;
    if mats.iter().any(|m| m.shape() != first.shape()) {
        return Err(Error::dim("correlation matrices differ in shape"));
    }
    let count = mats.len() as f64;
    let mut mean = DMatrix::zeros(first.nrows(), first.ncols());
    for m in mats {
        mean += m;
    }
    mean /= count;
    let mut std_err = DMatrix::zeros(mean.nrows(), mean.ncols());
    if mats.len() > 1 {
        for m in mats {
            std_err += (m - &mean).map(|v| v * v);
        }
        std_err = std_err.map(|v| libm::sqrt(v / (count - 1.0)) / libm::sqrt(count));
    }
    Ok(CorrelationSummary {
        mean,
        std_err,
        realizations: mats.len(),
        columns,
    })
}
