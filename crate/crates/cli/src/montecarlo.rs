//! Trial ensembles: independent stochastic evolutions, blow-up vs. survival
//! classification, (β, ε) sweeps, blow-up dynamics with rate extraction, and
//! center statistics.
//!
//! Trials are scheduled over a small worker pool (`SNLS_THREADS`, defaulting
//! to the available parallelism); every random draw is keyed by
//! `(master_seed, cell_index, trial_index)`, so results do not depend on the
//! thread count or scheduling order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use snls_core::error::{Error, Result};
use snls_core::grid::{make_preset_refined_grid, make_uniform_grid, Grid, State};
use snls_core::linalg::{cholesky_in_place, PackedLower};
use snls_core::noise::{
    build_covariance, factor_from_cholesky, homogeneous_covariance, sample_noise_vector,
    update_homogeneous_covariance, CovarianceFactor, NoiseKind, NoiseModel, PIVOT_FLOOR_REL,
};
use snls_core::observables::{
    self, discrete_mass, ground_state_q, parabolic_peak, rescaled_profile, ProfileSnapshot,
    TimeSeries,
};
use snls_core::refine::{needs_refinement, next_dt, refine_mesh, RefinePolicy};
use snls_core::rng::NoiseStream;
use snls_core::schemes::{potential, step, Scheme, SchemeConfig, StepContext};
use snls_core::Complex64;

/// 95% normal quantile for the Wilson interval.
const WILSON_Z: f64 = 1.959963984540054;

/// Initial condition family: a multiple of the ground state or of a unit
/// Gaussian bump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    GroundState { amplitude: f64 },
    Gaussian { amplitude: f64 },
}

impl InitialCondition {
    pub fn sample(&self, grid: &Grid, sigma: f64) -> State {
        match *self {
            InitialCondition::GroundState { amplitude } => {
                State::from_fn(grid, |x| Complex64::new(amplitude * ground_state_q(sigma, x), 0.0))
            }
            InitialCondition::Gaussian { amplitude } => {
                State::from_fn(grid, |x| Complex64::new(amplitude * (-x * x).exp(), 0.0))
            }
        }
    }
}

/// Mesh settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    Uniform { l_c: f64, dx: f64 },
    PresetRefined { l_c: f64, dx_outer: f64, core_half_width: f64, refine_factor: u32 },
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        match *self {
            GridSpec::Uniform { l_c, dx } => make_uniform_grid(l_c, dx),
            GridSpec::PresetRefined { l_c, dx_outer, core_half_width, refine_factor } => {
                make_preset_refined_grid(l_c, dx_outer, core_half_width, refine_factor)
            }
        }
    }
}

/// Correlation family; `kind(beta)` instantiates the model for one sweep
/// cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    GaussianDecay,
    PolynomialDecay { n: f64 },
    Riesz { unscaled: bool },
    Exponential,
}

impl NoiseFamily {
    pub fn riesz() -> Self {
        NoiseFamily::Riesz { unscaled: false }
    }

    pub fn kind(&self, beta: f64) -> NoiseKind {
        match *self {
            NoiseFamily::GaussianDecay => NoiseKind::GaussianDecay { beta },
            NoiseFamily::PolynomialDecay { n } => NoiseKind::PolynomialDecay { beta, n },
            NoiseFamily::Riesz { unscaled } => NoiseKind::Riesz { beta, unscaled },
            NoiseFamily::Exponential => NoiseKind::Exponential { beta },
        }
    }
}

/// How a run advances and when it stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunMode {
    /// Fixed step to a horizon, classifying by the amplitude threshold.
    Classification { dt: f64, horizon: f64 },
    /// Sup-norm adaptive step with dynamic refinement, running to the
    /// amplification stop.
    Dynamics { policy: RefinePolicy },
}

/// Full description of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub sigma: f64,
    pub scheme: Scheme,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iters: usize,
    pub ic: InitialCondition,
    pub grid: GridSpec,
    pub family: NoiseFamily,
    pub betas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub blowup_factor: f64,
    pub master_seed: u64,
    pub record_stride: usize,
    pub mode: RunMode,
    /// Safety limits for dynamics runs.
    pub max_steps: u64,
    pub tau_max: f64,
    /// Half-width and sample count of the final rescaled profile.
    pub profile_xi_max: f64,
    pub profile_samples: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("at least one trial required"));
        }
        if !(self.blowup_factor > 1.0) {
            return Err(Error::Config("blow-up factor must exceed 1"));
        }
        if self.betas.is_empty() || self.epsilons.is_empty() {
            return Err(Error::Config("beta and epsilon lists must be non-empty"));
        }
        for &b in &self.betas {
            self.family.kind(b).validate()?;
        }
        if let RunMode::Dynamics { policy } = &self.mode {
            policy.validate()?;
        }
        Ok(())
    }

    pub fn scheme_config(&self) -> Result<SchemeConfig> {
        SchemeConfig::new(self.scheme, self.sigma)?
            .with_tolerance(self.fixed_point_tol, self.fixed_point_max_iters)
    }
}

/// Classification of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    BlowUp,
    Survived,
    Failed,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::BlowUp => "blowup",
            Classification::Survived => "survived",
            Classification::Failed => "failed",
        }
    }
}

/// Rate trace of a dynamics run: `log10 L` against `log10(T - t)`, the
/// focusing parameter along the way, and the fitted quantities.
#[derive(Debug, Clone, Default)]
pub struct RateTrace {
    pub log_l: Vec<f64>,
    pub log_tmt: Vec<f64>,
    pub a: Vec<f64>,
    /// Least-squares slope of `log10 L` vs `log10(T - t)` over the last
    /// four decades of `L`.
    pub slope: f64,
    /// Blow-up time estimated jointly with the fit.
    pub fitted_t: f64,
}

/// Outcome of a single trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub classification: Classification,
    pub blowup_time: Option<f64>,
    pub center: Option<f64>,
    pub mass_error: f64,
    pub rate: Option<RateTrace>,
    pub profile: Option<ProfileSnapshot>,
}

/// One cell of a (β, ε) sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub beta: f64,
    pub epsilon: f64,
    pub trials: usize,
    pub blowups: usize,
    pub failed: usize,
    pub probability: f64,
    pub ci_halfwidth: f64,
}

/// Wilson 95% interval `(center, halfwidth)` for `k` successes in `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.5);
    }
    let z2 = WILSON_Z * WILSON_Z;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    (center, half)
}

/// Worker count: `SNLS_THREADS` when set, otherwise the available
/// parallelism.
pub fn thread_count() -> usize {
    if let Ok(v) = std::env::var("SNLS_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `f` for indices `0..n` across the worker pool and collects results
/// by index, independent of scheduling order.
pub fn run_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_count().min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|o| o.unwrap()).collect()
}

/// One evolving trial: state, grid, covariance factor, noise stream and the
/// LE history.
struct Engine {
    grid: Grid,
    state: State,
    cfg: SchemeConfig,
    model: NoiseModel,
    factor: Option<CovarianceFactor>,
    /// Assembled `Γ̃` of a homogeneous model, kept for incremental updates
    /// across refinements.
    gamma: Option<PackedLower>,
    stream: NoiseStream,
    zero_noise: Vec<f64>,
    prev: Option<(Vec<f64>, f64)>,
    mass_min: f64,
    mass_max: f64,
}

impl Engine {
    fn new(
        spec: &ExperimentSpec,
        beta: f64,
        eps: f64,
        stream: NoiseStream,
        grid: Grid,
    ) -> Result<Self> {
        let cfg = spec.scheme_config()?;
        let model = NoiseModel::new(spec.family.kind(beta), eps)?;
        let (factor, gamma) = if eps > 0.0 {
            if model.kind.is_diagonal() {
                (Some(build_covariance(&model, &grid)?), None)
            } else {
                let gamma = homogeneous_covariance(&model, &grid)?;
                let mut chol = gamma.clone();
                cholesky_in_place(&mut chol, PIVOT_FLOOR_REL * gamma.max_diagonal())?;
                (Some(factor_from_cholesky(&grid, chol)), Some(gamma))
            }
        } else {
            (None, None)
        };
        let state = spec.ic.sample(&grid, spec.sigma);
        let m0 = discrete_mass(&state, &grid);
        Ok(Engine {
            zero_noise: vec![0.0; grid.n_nodes()],
            grid,
            state,
            cfg,
            model,
            factor,
            gamma,
            stream,
            prev: None,
            mass_min: m0,
            mass_max: m0,
        })
    }

    fn advance(&mut self, dt: f64, dtau: f64) -> Result<()> {
        let noise = match &self.factor {
            Some(factor) => sample_noise_vector(factor, &mut self.stream, dt, &self.grid)?,
            None => Vec::new(),
        };
        let noise_ref: &[f64] = if noise.is_empty() { &self.zero_noise } else { &noise };

        // LE needs the previous accepted potential; bootstrap with CN.
        let (scheme, prev_potential, prev_dt) = match (self.cfg.scheme, &self.prev) {
            (Scheme::Le, Some((pot, pdt))) => (Scheme::Le, Some(pot.as_slice()), Some(*pdt)),
            (Scheme::Le, None) => (Scheme::Cn, None, None),
            (s, _) => (s, None, None),
        };
        let cfg = SchemeConfig { scheme, ..self.cfg };
        let ctx = StepContext {
            dt,
            dtau,
            noise: noise_ref,
            eps: self.model.epsilon,
            prev_potential,
            prev_dt,
        };
        let cur_pot = if self.cfg.scheme == Scheme::Le {
            Some(potential(&self.state.values, self.cfg.sigma))
        } else {
            None
        };
        let next = step(&self.state, &cfg, &ctx, &self.grid)?;
        if let Some(pot) = cur_pot {
            self.prev = Some((pot, dt));
        }
        self.state = next;
        let m = discrete_mass(&self.state, &self.grid);
        self.mass_min = self.mass_min.min(m);
        self.mass_max = self.mass_max.max(m);
        Ok(())
    }

    /// Refines the mesh, rebuilds the covariance factor, and invalidates
    /// the LE history.
    fn refine(&mut self, policy: &RefinePolicy, sigma: f64) -> Result<()> {
        let (state, grid, refreshed) = refine_mesh(&self.state, &self.grid, policy, sigma)?;
        let old_grid = std::mem::replace(&mut self.grid, grid);
        self.state = state;
        self.zero_noise = vec![0.0; self.grid.n_nodes()];
        self.prev = None;
        if refreshed && self.model.epsilon > 0.0 {
            if let Some(old_gamma) = &self.gamma {
                let gamma = update_homogeneous_covariance(
                    &self.model,
                    old_gamma,
                    &old_grid,
                    &self.grid,
                )?;
                let mut chol = gamma.clone();
                cholesky_in_place(&mut chol, PIVOT_FLOOR_REL * gamma.max_diagonal())?;
                self.factor = Some(factor_from_cholesky(&self.grid, chol));
                self.gamma = Some(gamma);
            } else {
                self.factor = Some(build_covariance(&self.model, &self.grid)?);
            }
        }
        Ok(())
    }

    fn mass_error(&self) -> f64 {
        self.mass_max - self.mass_min
    }
}

fn stream_for(spec: &ExperimentSpec, cell_index: usize, trial_index: usize) -> NoiseStream {
    NoiseStream::new(spec.master_seed, ((cell_index as u64) << 32) | trial_index as u64)
}

fn center_or_nodal(state: &State, grid: &Grid) -> f64 {
    match parabolic_peak(state, grid) {
        Ok((xc, _)) => xc,
        Err(_) => {
            let mut k = 0;
            let mut best = -1.0;
            for (j, v) in state.values.iter().enumerate() {
                let a = v.norm_sqr();
                if a > best {
                    best = a;
                    k = j;
                }
            }
            grid.nodes()[k]
        }
    }
}

/// Runs one classification trial of the sweep cell `(beta, eps)`.
///
/// The trial stops at the first crossing of `blowup_factor · ‖u_0‖_∞`
/// (blow-up) or at the horizon (survived); a step failure without a prior
/// crossing is reported as failed.
pub fn run_trial(
    spec: &ExperimentSpec,
    beta: f64,
    eps: f64,
    cell_index: usize,
    trial_index: usize,
) -> Result<TrialOutcome> {
    let RunMode::Classification { dt, horizon } = spec.mode else {
        return Err(Error::Config("run_trial expects classification mode"));
    };
    let grid = spec.grid.build()?;
    let stream = stream_for(spec, cell_index, trial_index);
    let mut engine = Engine::new(spec, beta, eps, stream, grid)?;
    let threshold = spec.blowup_factor * engine.state.sup_norm();
    let max_steps = (horizon / dt).ceil() as u64 + 2;

    for _ in 0..max_steps {
        if engine.state.time >= horizon - 1e-12 {
            return Ok(TrialOutcome {
                classification: Classification::Survived,
                blowup_time: None,
                center: None,
                mass_error: engine.mass_error(),
                rate: None,
                profile: None,
            });
        }
        let sup_before = engine.state.sup_norm();
        let dtau = dt * snls_core::math::pow_sigma(sup_before * sup_before, spec.sigma);
        match engine.advance(dt, dtau) {
            Ok(()) => {}
            Err(_) => {
                // overflow counts as escape only if the amplitude threshold
                // was already crossed
                let class = if sup_before > threshold {
                    Classification::BlowUp
                } else {
                    Classification::Failed
                };
                return Ok(TrialOutcome {
                    classification: class,
                    blowup_time: (class == Classification::BlowUp).then_some(engine.state.time),
                    center: (class == Classification::BlowUp)
                        .then(|| center_or_nodal(&engine.state, &engine.grid)),
                    mass_error: engine.mass_error(),
                    rate: None,
                    profile: None,
                });
            }
        }
        if engine.state.sup_norm() > threshold {
            return Ok(TrialOutcome {
                classification: Classification::BlowUp,
                blowup_time: Some(engine.state.time),
                center: Some(center_or_nodal(&engine.state, &engine.grid)),
                mass_error: engine.mass_error(),
                rate: None,
                profile: None,
            });
        }
    }
    Ok(TrialOutcome {
        classification: Classification::Survived,
        blowup_time: None,
        center: None,
        mass_error: engine.mass_error(),
        rate: None,
        profile: None,
    })
}

/// Runs the whole (β, ε) sweep; trials are parallel, the aggregation is a
/// deterministic order-independent reduction.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepCell>> {
    spec.validate()?;
    let mut cells = Vec::new();
    for (bi, &beta) in spec.betas.iter().enumerate() {
        for (ei, &eps) in spec.epsilons.iter().enumerate() {
            let cell_index = bi * spec.epsilons.len() + ei;
            let outcomes = run_indexed(spec.trials, |trial| {
                run_trial(spec, beta, eps, cell_index, trial)
            });
            let mut blowups = 0;
            let mut failed = 0;
            for o in &outcomes {
                match o {
                    Ok(t) => match t.classification {
                        Classification::BlowUp => blowups += 1,
                        Classification::Survived => {}
                        Classification::Failed => failed += 1,
                    },
                    Err(_) => failed += 1,
                }
            }
            let counted = spec.trials - failed;
            let probability = if counted > 0 { blowups as f64 / counted as f64 } else { 0.0 };
            let (_, ci_halfwidth) = wilson_interval(blowups, counted.max(1));
            eprintln!(
                "sweep cell beta={beta} eps={eps}: {blowups}/{counted} blow-ups ({failed} failed)"
            );
            cells.push(SweepCell {
                beta,
                epsilon: eps,
                trials: spec.trials,
                blowups,
                failed,
                probability,
                ci_halfwidth,
            });
        }
    }
    Ok(cells)
}

/// Kahan-compensated backward suffix sums of the step sizes:
/// `suffix[m] = Σ_{l >= m} dt_l`.
fn suffix_sums(dts: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dts.len() + 1];
    let mut sum = 0.0;
    let mut carry = 0.0;
    for m in (0..dts.len()).rev() {
        let y = dts[m] - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
        out[m] = sum;
    }
    out
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut sse = 0.0;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        let r = yi - slope * xi - intercept;
        sse += r * r;
    }
    (slope, intercept, sse)
}

/// Joint fit of the blow-up time and rate: minimizes the residual of the
/// regression `log10 L ~ log10(T - t)` over `T >= t_end` by golden-section
/// search in `ln(T - t_end)`, over the samples in the last `decades` of `L`.
fn fit_rate(
    log_l: &[f64],
    sum_to_end: &[f64],
    decades: f64,
) -> Option<(f64 /*slope*/, f64 /*theta = T - t_end*/, Vec<f64> /*log_tmt*/)> {
    let l_end = log_l.iter().cloned().fold(f64::INFINITY, f64::min);
    let window: Vec<usize> = (0..log_l.len())
        .filter(|&i| log_l[i] <= l_end + decades && sum_to_end[i] > 0.0)
        .collect();
    if window.len() < 8 {
        return None;
    }
    let s_min = window.iter().map(|&i| sum_to_end[i]).fold(f64::INFINITY, f64::min);
    let s_max = window.iter().map(|&i| sum_to_end[i]).fold(0.0f64, f64::max);
    let sse_at = |ln_theta: f64| -> f64 {
        let theta = ln_theta.exp();
        let x: Vec<f64> = window.iter().map(|&i| (theta + sum_to_end[i]).log10()).collect();
        let y: Vec<f64> = window.iter().map(|&i| log_l[i]).collect();
        linear_fit(&x, &y).2
    };
    let (mut lo, mut hi) = ((s_min * 1e-8).ln(), (s_max * 100.0).ln());
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = sse_at(c);
    let mut fd = sse_at(d);
    for _ in 0..120 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = sse_at(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = sse_at(d);
        }
    }
    let theta = (0.5 * (lo + hi)).exp();
    let x: Vec<f64> = window.iter().map(|&i| (theta + sum_to_end[i]).log10()).collect();
    let y: Vec<f64> = window.iter().map(|&i| log_l[i]).collect();
    let (slope, _, _) = linear_fit(&x, &y);
    let log_tmt = sum_to_end.iter().map(|&s| (theta + s).log10()).collect();
    Some((slope, theta, log_tmt))
}

/// Runs one blow-up dynamics trial: adaptive `Δt`, dynamic refinement with
/// covariance refresh, stop at `‖u‖_∞^σ >= sup_stop`. The outcome carries
/// the rate trace, the `a`-trace, the final rescaled profile and the center.
pub fn blowup_dynamics_run(
    spec: &ExperimentSpec,
    beta: f64,
    eps: f64,
    trial_index: usize,
) -> Result<TrialOutcome> {
    let RunMode::Dynamics { policy } = spec.mode else {
        return Err(Error::Config("blowup_dynamics_run expects dynamics mode"));
    };
    let grid = spec.grid.build()?;
    let stream = stream_for(spec, 0, trial_index);
    let mut engine = Engine::new(spec, beta, eps, stream, grid)?;

    let mut dts: Vec<f64> = Vec::new();
    let mut sample_steps: Vec<usize> = Vec::new();
    let mut log_l: Vec<f64> = Vec::new();
    let mut a_vals: Vec<f64> = Vec::new();
    let stride = spec.record_stride.max(1);

    let failed_outcome = |engine: &Engine| TrialOutcome {
        classification: Classification::Failed,
        blowup_time: None,
        center: None,
        mass_error: engine.mass_error(),
        rate: None,
        profile: None,
    };

    let mut reached_stop = false;
    for step_no in 0..spec.max_steps {
        let sup = engine.state.sup_norm();
        if snls_core::math::powf(sup, spec.sigma) >= policy.sup_stop {
            reached_stop = true;
            break;
        }
        if engine.state.tau > spec.tau_max {
            break;
        }
        if needs_refinement(&engine.state, &engine.grid, &policy, spec.sigma) {
            match engine.refine(&policy, spec.sigma) {
                Ok(()) => {}
                Err(Error::RefineAtBoundary) => return Ok(failed_outcome(&engine)),
                Err(e) => return Err(e),
            }
        }
        let (dt, dtau) = match next_dt(&engine.state, &policy, spec.sigma) {
            Ok(v) => v,
            Err(_) => return Ok(failed_outcome(&engine)),
        };
        if engine.advance(dt, dtau).is_err() {
            return Ok(failed_outcome(&engine));
        }
        dts.push(dt);
        if step_no % stride as u64 == 0 {
            if let Ok(l) = observables::blowup_scale_l(&engine.state, &engine.grid, spec.sigma) {
                sample_steps.push(dts.len());
                log_l.push(l.log10());
                a_vals
                    .push(observables::focusing_parameter_a(&engine.state, &engine.grid, spec.sigma)
                        .unwrap_or(f64::NAN));
            }
        }
    }

    if !reached_stop {
        return Ok(TrialOutcome {
            classification: Classification::Survived,
            blowup_time: None,
            center: None,
            mass_error: engine.mass_error(),
            rate: None,
            profile: None,
        });
    }

    let suffix = suffix_sums(&dts);
    let sum_to_end: Vec<f64> = sample_steps.iter().map(|&m| suffix[m]).collect();
    let rate = fit_rate(&log_l, &sum_to_end, 4.0).map(|(slope, theta, log_tmt)| RateTrace {
        log_l: log_l.clone(),
        log_tmt,
        a: a_vals.clone(),
        slope,
        fitted_t: engine.state.time + theta,
    });
    let profile = rescaled_profile(
        &engine.state,
        &engine.grid,
        spec.sigma,
        spec.profile_xi_max,
        spec.profile_samples,
    )
    .ok();
    let center = Some(center_or_nodal(&engine.state, &engine.grid));

    Ok(TrialOutcome {
        classification: Classification::BlowUp,
        blowup_time: Some(engine.state.time),
        center,
        mass_error: engine.mass_error(),
        rate,
        profile,
    })
}

/// Mean, variance and a fixed-bin histogram of the blow-up centers.
#[derive(Debug, Clone)]
pub struct CenterStats {
    pub mean: f64,
    pub variance: f64,
    /// `(bin center, count)` with bin width 0.01 on [-0.5, 0.5]; outliers
    /// are clamped into the edge bins.
    pub histogram: Vec<(f64, usize)>,
}

/// Sample statistics of the blow-up centers over the blow-up outcomes only.
pub fn center_statistics(outcomes: &[TrialOutcome]) -> Result<CenterStats> {
    let centers: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.classification == Classification::BlowUp)
        .filter_map(|o| o.center)
        .collect();
    if centers.len() < 2 {
        return Err(Error::TooFewBlowUps { have: centers.len() });
    }
    let n = centers.len() as f64;
    let mean = centers.iter().sum::<f64>() / n;
    let variance = centers.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
    let bins = 101usize;
    let width = 0.01;
    let mut histogram: Vec<(f64, usize)> =
        (0..bins).map(|i| ((i as f64 - 50.0) * width, 0)).collect();
    for &c in &centers {
        let idx = (((c / width) + 50.0).round() as i64).clamp(0, bins as i64 - 1) as usize;
        histogram[idx].1 += 1;
    }
    Ok(CenterStats { mean, variance, histogram })
}

/// Per-recorded-step ensemble means of the energy and of the running
/// maximum energy, for comparison against the theoretical bounds.
#[derive(Debug, Clone, Default)]
pub struct EnergyEnsemble {
    pub t: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub mean_running_max: Vec<f64>,
    /// Per-trial energy at the horizon, for standard errors of the mean.
    pub final_energy: Vec<f64>,
    /// Per-trial running maximum at the horizon.
    pub final_running_max: Vec<f64>,
    pub trials_used: usize,
    pub trials_excluded: usize,
}

/// Record of a single fixed-step evolution.
pub struct EvolveRecord {
    pub series: TimeSeries,
    pub running_max_energy: Vec<f64>,
    pub mass_error: f64,
    pub classification: Classification,
    pub final_state: State,
    pub final_grid: Grid,
}

/// Evolves one trial at fixed `dt`, recording the observables every
/// `record_stride` steps (the mass extremes are tracked every step).
pub fn run_evolve(
    spec: &ExperimentSpec,
    beta: f64,
    eps: f64,
    cell_index: usize,
    trial_index: usize,
) -> Result<EvolveRecord> {
    let RunMode::Classification { dt, horizon } = spec.mode else {
        return Err(Error::Config("run_evolve expects classification (fixed-step) mode"));
    };
    let grid = spec.grid.build()?;
    let stream = stream_for(spec, cell_index, trial_index);
    let mut engine = Engine::new(spec, beta, eps, stream, grid)?;
    let threshold = spec.blowup_factor * engine.state.sup_norm();
    let stride = spec.record_stride.max(1);

    let mut series = TimeSeries::new(stride);
    let mut running_max = Vec::new();
    let mut h_max = f64::NEG_INFINITY;
    let mut crossed = false;

    let h0 = observables::discrete_energy(&engine.state, &engine.grid, spec.sigma);
    h_max = h_max.max(h0);
    series.push_sample(&engine.state, &engine.grid, spec.sigma);
    running_max.push(h_max);

    let steps = (horizon / dt).round() as u64;
    for step_no in 1..=steps {
        let sup_before = engine.state.sup_norm();
        let dtau = dt * snls_core::math::pow_sigma(sup_before * sup_before, spec.sigma);
        engine.advance(dt, dtau)?;
        let h = observables::discrete_energy(&engine.state, &engine.grid, spec.sigma);
        h_max = h_max.max(h);
        if engine.state.sup_norm() > threshold {
            crossed = true;
        }
        if step_no % stride as u64 == 0 || step_no == steps {
            series.push_sample(&engine.state, &engine.grid, spec.sigma);
            running_max.push(h_max);
        }
    }
    let classification =
        if crossed { Classification::BlowUp } else { Classification::Survived };
    Ok(EvolveRecord {
        mass_error: engine.mass_error(),
        running_max_energy: running_max,
        series,
        classification,
        final_state: engine.state,
        final_grid: engine.grid,
    })
}

/// Runs `spec.trials` fixed-step evolutions and averages the energy and its
/// running maximum at each recorded time. Trials that fail or cross the
/// blow-up threshold are excluded from the means (the bounds are stated on
/// the existence interval) and counted.
pub fn run_energy_ensemble(spec: &ExperimentSpec, beta: f64, eps: f64) -> Result<EnergyEnsemble> {
    spec.validate()?;
    let records = run_indexed(spec.trials, |trial| run_evolve(spec, beta, eps, 0, trial));
    let mut ens = EnergyEnsemble::default();
    for rec in records.into_iter() {
        match rec {
            Ok(r) if r.classification == Classification::Survived => {
                if ens.t.is_empty() {
                    ens.t = r.series.t.clone();
                    ens.mean_energy = vec![0.0; r.series.energy.len()];
                    ens.mean_running_max = vec![0.0; r.running_max_energy.len()];
                }
                for (acc, v) in ens.mean_energy.iter_mut().zip(r.series.energy.iter()) {
                    *acc += v;
                }
                for (acc, v) in ens.mean_running_max.iter_mut().zip(r.running_max_energy.iter()) {
                    *acc += v;
                }
                ens.final_energy.push(*r.series.energy.last().unwrap());
                ens.final_running_max.push(*r.running_max_energy.last().unwrap());
                ens.trials_used += 1;
            }
            _ => ens.trials_excluded += 1,
        }
    }
    if ens.trials_used == 0 {
        return Err(Error::Config("all trials failed or blew up before the horizon"));
    }
    let n = ens.trials_used as f64;
    for v in ens.mean_energy.iter_mut() {
        *v /= n;
    }
    for v in ens.mean_running_max.iter_mut() {
        *v /= n;
    }
    Ok(ens)
}
