//! Discrete LTI plants in innovation form, seeded Gaussian noise and simulation.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;

/// Margin below one required of the spectral radius of `A - KC`.
pub const STABILITY_TOLERANCE: f64 = 1e-9;

/// `x' = A x + B u + K e`, `y = C x + D u + e`, together with the predictor-form
/// matrices `A - KC` and `B - KD`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    k: DMatrix<f64>,
    a_tilde: DMatrix<f64>,
    b_tilde: DMatrix<f64>,
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_len(name: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(format!(
            "{name} has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(())
}

impl StateSpaceModel {
    /// Builds the model; rejects inconsistent shapes and an unstable `A - KC`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        k: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let r = b.ncols();
        let l = c.nrows();
        check_shape("A", &a, n, n)?;
        check_shape("B", &b, n, r)?;
        check_shape("C", &c, l, n)?;
        check_shape("D", &d, l, r)?;
        check_shape("K", &k, n, l)?;
        let a_tilde = &a - &k * &c;
        let b_tilde = &b - &k * &d;
        let rho = spectral_radius(&a_tilde);
        if !(rho < 1.0 - STABILITY_TOLERANCE) {
            return Err(Error::UnstablePredictor(rho));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            k,
            a_tilde,
            b_tilde,
        })
    }

    /// Fifth-order model of two circular plates spun by a motor through flexible shafts.
    pub fn benchmark() -> Self {
        let mut a = DMatrix::zeros(5, 5);
        for (i, v) in [4.40, -8.09, 7.83, -4.00, 0.86].into_iter().enumerate() {
            a[(i, 0)] = v;
        }
        for i in 0..4 {
            a[(i, i + 1)] = 1.0;
        }
        let b = DMatrix::from_column_slice(5, 1, &[0.00098, 0.01299, 0.01859, 0.0033, -0.00002]);
        let c = DMatrix::from_row_slice(1, 5, &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let d = DMatrix::zeros(1, 1);
        let k = DMatrix::from_column_slice(5, 1, &[2.3, -6.64, 7.515, -4.0146, 0.86336]);
        Self::new(a, b, c, d, k).expect("benchmark model has a stable predictor form")
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn r(&self) -> usize {
        self.b.ncols()
    }
    pub fn l(&self) -> usize {
        self.c.nrows()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
    /// `A - KC`
    pub fn a_tilde(&self) -> &DMatrix<f64> {
        &self.a_tilde
    }
    /// `B - KD`
    pub fn b_tilde(&self) -> &DMatrix<f64> {
        &self.b_tilde
    }

    /// One innovation-form step, returning `(x_next, y)`.
    pub fn step_innovation(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        e: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        check_len("x", x, self.n())?;
        check_len("u", u, self.r())?;
        check_len("e", e, self.l())?;
        let y = &self.c * x + &self.d * u + e;
        let x_next = &self.a * x + &self.b * u + &self.k * e;
        Ok((x_next, y))
    }

    /// One predictor-form step driven by the measured output.
    pub fn step_predictor(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("x", x, self.n())?;
        check_len("u", u, self.r())?;
        check_len("y", y, self.l())?;
        Ok(&self.a_tilde * x + &self.b_tilde * u + &self.k * y)
    }
}

/// Random model with `rho(A) <= max_radius` and `rho(A~) <= max_radius`, fixed by `seed`.
///
/// Entries are standard normal; `A` is rescaled to a random spectral radius in
/// `[0.3, 1] * max_radius` and `K` is drawn until the predictor matrix satisfies the bound.
pub fn random_stable_model(seed: u64, n: usize, r: usize, l: usize, max_radius: f64) -> Result<StateSpaceModel> {
    if n == 0 || r == 0 || l == 0 || !(max_radius > 0.0 && max_radius < 1.0) {
        return Err(Error::param("random model needs positive sizes and a radius in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        DMatrix::from_fn(rows, cols, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        })
    };
    let raw = normal(n, n, &mut rng);
    let target = max_radius * (0.3 + 0.7 * rand::Rng::random::<f64>(&mut rng));
    let rho = spectral_radius(&raw);
    let a = if rho > 0.0 { raw * (target / rho) } else { raw };
    let b = normal(n, r, &mut rng);
    let c = normal(l, n, &mut rng);
    let d = normal(l, r, &mut rng) * 0.5;
    let mut scale = 0.5;
    for _ in 0..200 {
        let k = normal(n, l, &mut rng) * scale;
        if spectral_radius(&(&a - &k * &c)) <= max_radius {
            return StateSpaceModel::new(a, b, c, d, k);
        }
        scale *= 0.9;
    }
    StateSpaceModel::new(a.clone(), b, c, d, DMatrix::zeros(n, l))
}

/// Zero-mean white Gaussian vector sequence with covariance `variance`, fixed by `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProcess {
    pub seed: u64,
    pub variance: DMatrix<f64>,
}

impl NoiseProcess {
    pub fn new(seed: u64, variance: DMatrix<f64>) -> Self {
        Self { seed, variance }
    }

    /// Independent components with a common variance.
    pub fn isotropic(seed: u64, dim: usize, variance: f64) -> Self {
        Self::new(seed, DMatrix::identity(dim, dim) * variance)
    }

    pub fn dim(&self) -> usize {
        self.variance.nrows()
    }

    pub fn stream(&self) -> Result<NoiseStream> {
        let dim = self.variance.nrows();
        if self.variance.ncols() != dim {
            return Err(Error::dim("noise covariance must be square"));
        }
        let factor = if self.variance.iter().all(|&v| v == 0.0) {
            None
        } else {
            let chol = self
                .variance
                .clone()
                .cholesky()
                .ok_or_else(|| Error::param("noise covariance is not positive definite"))?;
            Some(chol.l())
        };
        Ok(NoiseStream {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            dim,
            factor,
        })
    }
}

/// Sample generator created by [`NoiseProcess::stream`].
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    dim: usize,
    factor: Option<DMatrix<f64>>,
}

impl NoiseStream {
    pub fn sample(&mut self) -> DVector<f64> {
        match &self.factor {
            None => DVector::zeros(self.dim),
            Some(l) => {
                let rng = &mut self.rng;
                let z = DVector::from_fn(self.dim, |_, _| {
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                });
                l * z
            }
        }
    }
}

/// Per-step record of a simulation run. All sequences always have equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalLog {
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    e: Vec<DVector<f64>>,
    r: Vec<DVector<f64>>,
    x: Vec<DVector<f64>>,
}

impl SignalLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(steps: usize) -> Self {
        Self {
            u: Vec::with_capacity(steps),
            y: Vec::with_capacity(steps),
            e: Vec::with_capacity(steps),
            r: Vec::with_capacity(steps),
            x: Vec::with_capacity(steps),
        }
    }

    /// Appends one step: the state at the start of the step and the signals during it.
    pub fn push(
        &mut self,
        x: DVector<f64>,
        u: DVector<f64>,
        y: DVector<f64>,
        e: DVector<f64>,
        r: DVector<f64>,
    ) {
        self.x.push(x);
        self.u.push(u);
        self.y.push(y);
        self.e.push(e);
        self.r.push(r);
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
    pub fn u(&self) -> &[DVector<f64>] {
        &self.u
    }
    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }
    pub fn e(&self) -> &[DVector<f64>] {
        &self.e
    }
    pub fn r(&self) -> &[DVector<f64>] {
        &self.r
    }
    pub fn x(&self) -> &[DVector<f64>] {
        &self.x
    }
}

/// What a controller sees when asked for the input of step `step`.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Absolute step index; `log` holds steps `0..step`.
    pub step: usize,
    pub log: &'a SignalLog,
    /// Reference from the current step onwards.
    pub reference: &'a [DVector<f64>],
    /// True plant state at the start of the step (only the oracle may use it).
    pub state: &'a DVector<f64>,
}

/// Plant, state and noise stream advancing one sample at a time.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: StateSpaceModel,
    x: DVector<f64>,
    noise: NoiseStream,
    log: SignalLog,
}

impl Simulator {
    pub fn new(model: StateSpaceModel, noise: &NoiseProcess, x0: DVector<f64>) -> Result<Self> {
        check_len("x0", &x0, model.n())?;
        if noise.dim() != model.l() {
            return Err(Error::dim(format!(
                "noise dimension {} does not match output dimension {}",
                noise.dim(),
                model.l()
            )));
        }
        Ok(Self {
            x: x0,
            noise: noise.stream()?,
            model,
            log: SignalLog::new(),
        })
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }
    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }
    pub fn log(&self) -> &SignalLog {
        &self.log
    }
    pub fn into_log(self) -> SignalLog {
        self.log
    }

    /// Applies `u` for one step and returns the output measured during it.
    pub fn step(&mut self, u: DVector<f64>, r: DVector<f64>) -> Result<DVector<f64>> {
        let e = self.noise.sample();
        let (x_next, y) = self.model.step_innovation(&self.x, &u, &e)?;
        let x = core::mem::replace(&mut self.x, x_next);
        self.log.push(x, u, y.clone(), e, r);
        Ok(y)
    }

    /// Runs `steps` closed-loop steps. `reference[j]` is the set-point of the j-th of
    /// these steps; the controller receives `reference[j..]` as preview.
    pub fn run_closed_loop<F>(
        &mut self,
        controller: &mut F,
        reference: &[DVector<f64>],
        steps: usize,
    ) -> Result<()>
    where
        F: FnMut(&StepContext<'_>) -> Result<DVector<f64>>,
    {
        if reference.len() < steps {
            return Err(Error::dim(format!(
                "reference has {} samples, {steps} steps requested",
                reference.len()
            )));
        }
        for j in 0..steps {
            let step = self.log.len();
            let u = {
                let ctx = StepContext {
                    step,
                    log: &self.log,
                    reference: &reference[j..],
                    state: &self.x,
                };
                controller(&ctx).map_err(|source| Error::Controller {
                    step,
                    source: Box::new(source),
                })?
            };
            self.step(u, reference[j].clone())?;
        }
        Ok(())
    }
}

/// Open-loop simulation with the given input sequence.
pub fn simulate_open_loop(
    model: &StateSpaceModel,
    u_seq: &[DVector<f64>],
    noise: &NoiseProcess,
    x0: DVector<f64>,
) -> Result<SignalLog> {
    if u_seq.is_empty() {
        return Err(Error::param("input sequence is empty"));
    }
    let mut sim = Simulator::new(model.clone(), noise, x0)?;
    let zero_r = DVector::zeros(model.l());
    for u in u_seq {
        sim.step(u.clone(), zero_r.clone())?;
    }
    Ok(sim.into_log())
}

/// Closed-loop simulation from `x0`; the controller fixes `u_k` before `y_k` exists.
pub fn run_closed_loop<F>(
    model: &StateSpaceModel,
    controller: &mut F,
    reference: &[DVector<f64>],
    steps: usize,
    noise: &NoiseProcess,
    x0: DVector<f64>,
) -> Result<SignalLog>
where
    F: FnMut(&StepContext<'_>) -> Result<DVector<f64>>,
{
    let mut sim = Simulator::new(model.clone(), noise, x0)?;
    sim.run_closed_loop(controller, reference, steps)?;
    Ok(sim.into_log())
}
