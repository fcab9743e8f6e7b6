//! The adaptive iteration and seeded runs.
//!
//! Canonical one-time-scale form, per coordinate:
//!
//! ```text
//! θ_{n+1} = θ_n − γ_{n+1} g_{n+1} / √(w_n + ε)
//! w_{n+1} = w_n + γ_{n+1} (p_n g_{n+1}² − q_n w_n)
//! ```
//!
//! plus the historical `(θ, v, α, β₂)` parametrization and its rescaled
//! `(θ̃, w̃ = v/S_n)` form, which produce identical position trajectories.

use crate::coordwise::{all_finite, cadd_scalar, cdiv, csq, csqrt, norm, norm_sq, CoordError};
use crate::diagnostics::{grad_l1sq, lyapunov_value, LyapunovParams, SeriesAccumulators};
use crate::noise::{batch_size, MinibatchMode, NoiseModel, RngStream};
use crate::objectives::Objective;
use crate::schedules::{eval_schedules, validate_assumptions, ScheduleSet, StepParams, ValidationReport};
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Runs abort once `‖θ‖` or `f(θ)` exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("non-finite input to the update")]
    NonFiniteInput,
    #[error("dimension mismatch: state has {state}, gradient has {grad}")]
    DimensionMismatch { state: usize, grad: usize },
}

#[derive(Debug, Clone, Error)]
pub enum RunError {
    #[error("invalid run input: {0}")]
    InvalidInput(String),
    #[error("step-size assumptions violated:\n{0}")]
    AssumptionsViolated(ValidationReport),
    #[error("iterate left the finite region at step {step}")]
    NonFiniteState { step: u64, partial: Box<RunRecord> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub n: u64,
}

impl ParamState {
    pub fn new(theta: Vec<f64>, w: Vec<f64>, n: u64) -> Self {
        ParamState { theta, w, n }
    }
}

fn check_inputs(len: usize, g: &[f64], scalars: &[f64]) -> Result<(), StepError> {
    if g.len() != len {
        return Err(StepError::DimensionMismatch { state: len, grad: g.len() });
    }
    if !all_finite(g) || !all_finite(scalars) {
        return Err(StepError::NonFiniteInput);
    }
    Ok(())
}

/// In-place canonical update.
pub fn step_in_place(state: &mut ParamState, g: &[f64], gamma: f64, p: f64, q: f64, eps: f64) -> Result<(), StepError> {
    check_inputs(state.theta.len(), g, &[gamma, p, q, eps])?;
    for ((t, w), &gi) in state.theta.iter_mut().zip(state.w.iter_mut()).zip(g) {
        *t -= gamma * (gi / (*w + eps).sqrt());
        *w += gamma * (p * (gi * gi) - q * *w);
    }
    state.n += 1;
    Ok(())
}

/// Canonical update `(θ_n, w_n) ↦ (θ_{n+1}, w_{n+1})`.
pub fn step(state: &ParamState, g: &[f64], gamma: f64, p: f64, q: f64, eps: f64) -> Result<ParamState, StepError> {
    let mut next = state.clone();
    step_in_place(&mut next, g, gamma, p, q, eps)?;
    Ok(next)
}

/// The same update written with the coordinate-wise algebra; used to
/// cross-check [`step`].
pub fn step_composed(state: &ParamState, g: &[f64], gamma: f64, p: f64, q: f64, eps: f64) -> Result<ParamState, CoordError> {
    let denom = csqrt(&cadd_scalar(&state.w, eps))?;
    let dir = cdiv(g, &denom)?;
    let g2 = csq(g);
    let theta = state.theta.iter().zip(&dir).map(|(t, d)| t - gamma * d).collect();
    let w = state
        .w
        .iter()
        .zip(&g2)
        .map(|(w, g2)| w + gamma * (p * g2 - q * w))
        .collect();
    Ok(ParamState { theta, w, n: state.n + 1 })
}

/// Historical state `(θ, v)` where `v` accumulates squared gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistState {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub n: u64,
}

/// `θ' = θ − α g/√(v + ε̃)`, `v' = β₂ v + g²`.
pub fn step_historical(state: &HistState, g: &[f64], alpha: f64, beta2: f64, eps_tilde: f64) -> Result<HistState, StepError> {
    check_inputs(state.theta.len(), g, &[alpha, beta2, eps_tilde])?;
    let mut next = state.clone();
    for ((t, v), &gi) in next.theta.iter_mut().zip(next.v.iter_mut()).zip(g) {
        *t -= alpha * (gi / (*v + eps_tilde).sqrt());
        *v = beta2 * *v + gi * gi;
    }
    next.n += 1;
    Ok(next)
}

/// Rescaled historical state `(θ̃, w̃ = v/S_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledState {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub n: u64,
}

/// `θ̃' = θ̃ − α̃ g/√(w̃ + ε̃/S_n)`, `w̃' = w̃ + (g² − w̃)/S_{n+1}`.
pub fn step_rescaled(
    state: &RescaledState,
    g: &[f64],
    alpha_tilde: f64,
    s_n: f64,
    s_next: f64,
    eps_tilde: f64,
) -> Result<RescaledState, StepError> {
    check_inputs(state.theta.len(), g, &[alpha_tilde, s_n, s_next, eps_tilde])?;
    if !(s_n > 0.0 && s_next > 0.0) {
        return Err(StepError::NonFiniteInput);
    }
    let eps_n = eps_tilde / s_n;
    let mut next = state.clone();
    for ((t, w), &gi) in next.theta.iter_mut().zip(next.w.iter_mut()).zip(g) {
        *t -= alpha_tilde * (gi / (*w + eps_n).sqrt());
        *w += (gi * gi - *w) / s_next;
    }
    next.n += 1;
    Ok(next)
}

/// Fixed `(γ, p, q, σ²)` over a finite horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantParams {
    pub gamma: f64,
    pub p: f64,
    pub q: f64,
    pub sigma_sq: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepRule {
    Schedule(ScheduleSet),
    Constant(ConstantParams),
}

impl StepRule {
    fn params(&self, n: u64) -> StepParams {
        match self {
            StepRule::Schedule(set) => eval_schedules(set, n),
            StepRule::Constant(c) => StepParams {
                gamma: c.gamma,
                p: c.p,
                q: c.q,
                sigma: c.sigma_sq.sqrt(),
            },
        }
    }

    /// `γ_k` for `k ≥ 1`.
    fn gamma_at(&self, k: u64) -> f64 {
        match self {
            StepRule::Schedule(set) => set.gamma.value(k),
            StepRule::Constant(c) => c.gamma,
        }
    }

    fn eps(&self) -> f64 {
        match self {
            StepRule::Schedule(set) => set.eps,
            StepRule::Constant(c) => c.eps,
        }
    }

    fn sup_p(&self) -> f64 {
        match self {
            StepRule::Schedule(set) => set.sup_p(),
            StepRule::Constant(c) => c.p,
        }
    }

    fn sigma_base(&self) -> f64 {
        match self {
            StepRule::Schedule(set) => set.sigma.coef,
            StepRule::Constant(c) => c.sigma_sq.sqrt(),
        }
    }

    fn batch_exponent(&self) -> f64 {
        match self {
            StepRule::Schedule(set) => set.sigma.exponent,
            StepRule::Constant(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub n_steps: u64,
    pub seed: u64,
    /// ChaCha stream id; distinct runs sharing a seed use distinct streams.
    #[serde(default)]
    pub stream: u64,
    pub thinning: u64,
    #[serde(default)]
    pub minibatch: MinibatchMode,
    #[serde(default)]
    pub override_assumptions: bool,
    /// Keep `(τ_n, θ_n, w_n)` at every step.
    #[serde(default)]
    pub record_trajectory: bool,
    /// Keep `grad_l1sq(∇f(θ_k))` for `k = 1..=n_steps` after each step.
    #[serde(default)]
    pub record_grad_l1sq: bool,
}

impl RunOptions {
    pub fn new(n_steps: u64, seed: u64) -> Self {
        RunOptions {
            n_steps,
            seed,
            stream: 0,
            thinning: 1,
            minibatch: MinibatchMode::Analytic,
            override_assumptions: false,
            record_trajectory: false,
            record_grad_l1sq: false,
        }
    }

    pub fn thinning(mut self, k: u64) -> Self {
        self.thinning = k;
        self
    }

    pub fn stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn trajectory(mut self) -> Self {
        self.record_trajectory = true;
        self
    }

    pub fn override_assumptions(mut self, yes: bool) -> Self {
        self.override_assumptions = yes;
        self
    }

    pub fn minibatch(mut self, mode: MinibatchMode) -> Self {
        self.minibatch = mode;
        self
    }
}

/// What produced a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub objective: String,
    pub dim: usize,
    pub noise: String,
    pub rule: StepRule,
    pub theta0: Vec<f64>,
    pub w0: Vec<f64>,
    pub options: RunOptions,
}

/// Diagnostics at state index `n`. Partial sums cover the updates from
/// indices `1..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: u64,
    pub f: f64,
    pub grad_sq: f64,
    pub grad_l1sq: f64,
    pub w_norm: f64,
    pub lyapunov: f64,
    pub sum_grad: f64,
    pub sum_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `τ_n = Σ_{k ≤ n} γ_k` for each stored index.
    pub tau: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub stream: u64,
    pub config: RunSnapshot,
    /// Thinned series: the initial state, every `thinning`-th step, and the
    /// last step.
    pub series: Vec<SeriesPoint>,
    pub grad_l1sq: Vec<f64>,
    pub trajectory: Option<Trajectory>,
    pub final_state: ParamState,
    pub accumulators: SeriesAccumulators,
    /// Smallest coordinate of `w` seen over the run.
    pub min_w: f64,
    pub diverged_at: Option<u64>,
    #[serde(skip)]
    pub wall_time: Duration,
}

// Wall time is excluded: records compare equal when their content does.
impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.stream == other.stream
            && self.config == other.config
            && self.series == other.series
            && self.grad_l1sq == other.grad_l1sq
            && self.trajectory == other.trajectory
            && self.final_state == other.final_state
            && self.accumulators == other.accumulators
            && self.min_w == other.min_w
            && self.diverged_at == other.diverged_at
    }
}

impl RunRecord {
    pub fn final_grad_norm(&self, obj: &dyn Objective) -> f64 {
        norm(&obj.grad(&self.final_state.theta))
    }

    pub fn final_w_norm(&self) -> f64 {
        norm(&self.final_state.w)
    }

    /// Series point recorded at state index `n`, if any.
    pub fn point_at(&self, n: u64) -> Option<&SeriesPoint> {
        self.series.iter().find(|p| p.n == n)
    }
}

fn check_start(obj: &dyn Objective, model: &NoiseModel, theta0: &[f64], w0: &[f64], opts: &RunOptions) -> Result<(), RunError> {
    let d = obj.dim();
    if theta0.len() != d || w0.len() != d || model.dim() != d {
        return Err(RunError::InvalidInput(format!(
            "dimension mismatch: objective {d}, theta0 {}, w0 {}, noise {}",
            theta0.len(),
            w0.len(),
            model.dim()
        )));
    }
    if !all_finite(theta0) || !all_finite(w0) {
        return Err(RunError::InvalidInput("initial state is not finite".into()));
    }
    if w0.iter().any(|&w| w < 0.0) {
        return Err(RunError::InvalidInput("w0 must be non-negative".into()));
    }
    if opts.thinning == 0 {
        return Err(RunError::InvalidInput("thinning must be at least 1".into()));
    }
    Ok(())
}

/// Iterates the canonical update with a step-size schedule.
///
/// Iterates are indexed from 1: `θ0` is `θ_1` and the update from index `n`
/// uses `(γ_{n+1}, p_n, q_n, σ_{n+1})`.
pub fn run(
    obj: &dyn Objective,
    set: &ScheduleSet,
    model: &NoiseModel,
    theta0: &[f64],
    w0: &[f64],
    opts: &RunOptions,
) -> Result<RunRecord, RunError> {
    set.check().map_err(|e| RunError::InvalidInput(e.to_string()))?;
    if !opts.override_assumptions {
        let report = validate_assumptions(set);
        if !report.all_pass() {
            return Err(RunError::AssumptionsViolated(report));
        }
    }
    drive(obj, model, &StepRule::Schedule(set.clone()), theta0, w0, opts)
}

/// Constant-parameter, finite-horizon run; records `grad_l1sq` at every step.
pub fn run_constant(
    obj: &dyn Objective,
    params: ConstantParams,
    model: &NoiseModel,
    theta0: &[f64],
    w0: &[f64],
    opts: &RunOptions,
) -> Result<RunRecord, RunError> {
    if !(params.gamma >= 0.0 && params.p >= 0.0 && params.q >= 0.0 && params.sigma_sq >= 0.0) {
        return Err(RunError::InvalidInput("constant parameters must be non-negative".into()));
    }
    if !(params.gamma * params.q < 1.0) {
        return Err(RunError::InvalidInput(format!(
            "gamma*q = {} must be < 1",
            params.gamma * params.q
        )));
    }
    if !(params.eps > 0.0) {
        return Err(RunError::InvalidInput("eps must be positive".into()));
    }
    let mut opts = opts.clone();
    opts.record_grad_l1sq = true;
    drive(obj, model, &StepRule::Constant(params), theta0, w0, &opts)
}

fn drive(
    obj: &dyn Objective,
    model: &NoiseModel,
    rule: &StepRule,
    theta0: &[f64],
    w0: &[f64],
    opts: &RunOptions,
) -> Result<RunRecord, RunError> {
    check_start(obj, model, theta0, w0, opts)?;
    let started = Instant::now();
    let d = obj.dim();
    let eps = rule.eps();
    let lp = LyapunovParams::tuned(rule.sup_p(), eps);
    let mut rng = RngStream::with_stream(opts.seed, opts.stream);

    let mut state = ParamState::new(theta0.to_vec(), w0.to_vec(), 1);
    let mut grad = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut zeta = vec![0.0; d];
    let mut acc = SeriesAccumulators::default();
    let mut min_w = w0.iter().cloned().fold(f64::INFINITY, f64::min);

    let n_steps = opts.n_steps;
    let expected_points = 1 + n_steps.div_ceil(opts.thinning) as usize;
    let mut series = Vec::with_capacity(expected_points);
    let mut grad_series = Vec::with_capacity(if opts.record_grad_l1sq { n_steps as usize } else { 0 });
    let mut traj = opts.record_trajectory.then(|| Trajectory {
        tau: Vec::with_capacity(n_steps as usize + 1),
        theta: Vec::with_capacity(n_steps as usize + 1),
        w: Vec::with_capacity(n_steps as usize + 1),
    });
    let mut tau = rule.gamma_at(1);

    obj.grad_into(&state.theta, &mut grad);
    let mut f = obj.value(&state.theta);

    let point = |state: &ParamState, f: f64, grad: &[f64], acc: &SeriesAccumulators| SeriesPoint {
        n: state.n,
        f,
        grad_sq: norm_sq(grad),
        grad_l1sq: grad_l1sq(grad),
        w_norm: norm(&state.w),
        lyapunov: lyapunov_value(&state.w, f, &lp),
        sum_grad: acc.sum_grad,
        sum_w: acc.sum_w,
    };
    series.push(point(&state, f, &grad, &acc));
    if let Some(t) = traj.as_mut() {
        t.tau.push(tau);
        t.theta.push(state.theta.clone());
        t.w.push(state.w.clone());
    }

    let batch_exp = rule.batch_exponent();
    let sigma_base = rule.sigma_base();
    let noisy = sigma_base > 0.0;
    let state_scaled = model.needs_value();

    for j in 1..=n_steps {
        let n = state.n;
        let sp = rule.params(n);
        acc.accumulate(sp.gamma, sp.q, &grad, &state.w);

        g.copy_from_slice(&grad);
        if noisy {
            let f_noise = if state_scaled { f } else { 0.0 };
            match opts.minibatch {
                MinibatchMode::Analytic => {
                    if sp.sigma > 0.0 {
                        model.sample_into(f_noise, &mut rng, &mut zeta);
                        for (gi, z) in g.iter_mut().zip(&zeta) {
                            *gi += sp.sigma * z;
                        }
                    }
                }
                MinibatchMode::Literal => {
                    let m = batch_size(n + 1, batch_exp);
                    let scale = sigma_base / m as f64;
                    for _ in 0..m {
                        model.sample_into(f_noise, &mut rng, &mut zeta);
                        for (gi, z) in g.iter_mut().zip(&zeta) {
                            *gi += scale * z;
                        }
                    }
                }
            }
        }

        if step_in_place(&mut state, &g, sp.gamma, sp.p, sp.q, eps).is_err() {
            return Err(abort(state, j, series, grad_series, traj, acc, min_w, rule, obj, model, theta0, w0, opts, started));
        }
        obj.grad_into(&state.theta, &mut grad);
        f = obj.value(&state.theta);
        tau += rule.gamma_at(state.n);

        let theta_norm = norm(&state.theta);
        if !(theta_norm <= DIVERGENCE_LIMIT) || !(f <= DIVERGENCE_LIMIT) || !all_finite(&state.w) {
            return Err(abort(state, j, series, grad_series, traj, acc, min_w, rule, obj, model, theta0, w0, opts, started));
        }
        for &w in &state.w {
            min_w = min_w.min(w);
        }
        if opts.record_grad_l1sq {
            grad_series.push(grad_l1sq(&grad));
        }
        if let Some(t) = traj.as_mut() {
            t.tau.push(tau);
            t.theta.push(state.theta.clone());
            t.w.push(state.w.clone());
        }
        if j % opts.thinning == 0 || j == n_steps {
            series.push(point(&state, f, &grad, &acc));
        }
    }

    Ok(RunRecord {
        seed: opts.seed,
        stream: opts.stream,
        config: snapshot(rule, obj, model, theta0, w0, opts),
        series,
        grad_l1sq: grad_series,
        trajectory: traj,
        final_state: state,
        accumulators: acc,
        min_w,
        diverged_at: None,
        wall_time: started.elapsed(),
    })
}

fn snapshot(rule: &StepRule, obj: &dyn Objective, model: &NoiseModel, theta0: &[f64], w0: &[f64], opts: &RunOptions) -> RunSnapshot {
    RunSnapshot {
        objective: obj.name().to_string(),
        dim: obj.dim(),
        noise: model.label(),
        rule: rule.clone(),
        theta0: theta0.to_vec(),
        w0: w0.to_vec(),
        options: opts.clone(),
    }
}

#[allow(clippy::too_many_arguments)]
fn abort(
    state: ParamState,
    step: u64,
    series: Vec<SeriesPoint>,
    grad_series: Vec<f64>,
    trajectory: Option<Trajectory>,
    accumulators: SeriesAccumulators,
    min_w: f64,
    rule: &StepRule,
    obj: &dyn Objective,
    model: &NoiseModel,
    theta0: &[f64],
    w0: &[f64],
    opts: &RunOptions,
    started: Instant,
) -> RunError {
    let partial = RunRecord {
        seed: opts.seed,
        stream: opts.stream,
        config: snapshot(rule, obj, model, theta0, w0, opts),
        series,
        grad_l1sq: grad_series,
        trajectory,
        final_state: state,
        accumulators,
        min_w,
        diverged_at: Some(step),
        wall_time: started.elapsed(),
    };
    RunError::NonFiniteState {
        step,
        partial: Box::new(partial),
    }
}
