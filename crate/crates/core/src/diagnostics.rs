//! Lyapunov values, the rate metric, series partial sums, Monte Carlo checks
//! of the one-step inequalities, the limit vector field and its flow, and
//! equilibrium classification.

use crate::coordwise::{all_finite, distance, norm, norm_sq};
use crate::noise::{NoiseModel, RngStream};
use crate::objectives::Objective;
use crate::optimizer::{ParamState, RunRecord};
use crate::schedules::{eval_schedules, ScheduleSet};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagError {
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("flow left the finite region at time {time}")]
    NonFiniteState { time: f64 },
    #[error("not a critical point: |grad| = {grad_norm:e}")]
    NotACriticalPoint { grad_norm: f64 },
    #[error("equilibrium is not hyperbolic: Hessian has a zero eigenvalue")]
    NonHyperbolic,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `(Σ_i |g_i|)²`.
pub fn grad_l1sq(g: &[f64]) -> f64 {
    let s: f64 = g.iter().map(|x| x.abs()).sum();
    s * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

impl LyapunovParams {
    /// Smallest round values with `b > 2 sup p` and `2a ≥ b sup p`.
    pub fn tuned(sup_p: f64, eps: f64) -> Self {
        let b = 2.0 * sup_p + 1.0;
        LyapunovParams {
            a: b * sup_p / 2.0 + 1.0,
            b,
            eps,
        }
    }

    pub fn satisfies_tuning(&self, sup_p: f64) -> bool {
        self.b > 2.0 * sup_p && 2.0 * self.a >= self.b * sup_p
    }
}

/// `Σ(w+ε) + a f² + b f Σ√(w+ε)` from `w` and a precomputed `f`.
pub fn lyapunov_value(w: &[f64], f: f64, lp: &LyapunovParams) -> f64 {
    let (mut lin, mut root) = (0.0, 0.0);
    for &wi in w {
        let x = wi + lp.eps;
        lin += x;
        root += x.sqrt();
    }
    lin + lp.a * f * f + lp.b * f * root
}

pub fn lyapunov(state: &ParamState, obj: &dyn Objective, lp: &LyapunovParams) -> f64 {
    lyapunov_value(&state.w, obj.value(&state.theta), lp)
}

/// Running sums `Σ γ_{k+1} grad_l1sq(∇f(θ_k))` and `Σ γ_{k+1} q_k Σ_i w_{k,i}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesAccumulators {
    pub sum_grad: f64,
    pub sum_w: f64,
}

impl SeriesAccumulators {
    pub fn accumulate(&mut self, gamma: f64, q: f64, grad: &[f64], w: &[f64]) {
        self.sum_grad += gamma * grad_l1sq(grad);
        self.sum_w += gamma * q * w.iter().sum::<f64>();
    }
}

/// `(1/N) Σ_{k=1}^N grad_l1sq(∇f(θ_k))`: the rate metric's expectation over
/// a uniform `τ`, conditional on the trajectory.
pub fn rate_metric(record: &RunRecord, n: usize) -> Result<f64, DiagError> {
    if n == 0 {
        return Err(DiagError::InvalidArgument("N must be positive".into()));
    }
    if record.grad_l1sq.len() < n {
        return Err(DiagError::InsufficientHistory(format!(
            "need {n} steps of grad_l1sq, record has {}",
            record.grad_l1sq.len()
        )));
    }
    Ok(record.grad_l1sq[..n].iter().sum::<f64>() / n as f64)
}

/// One Monte Carlo check: is `lhs ≤ rhs + 3 se`?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    pub pass: bool,
    pub n_mc: usize,
    /// `rhs − lhs`.
    pub slack: f64,
}

impl InequalityReport {
    fn new(name: &str, samples: &[f64], rhs: f64) -> Self {
        let (lhs, se) = mean_se(samples);
        // Rounding allowance for the noiseless case, where se = 0.
        let tol = 3.0 * se + 1e-12 * (1.0 + rhs.abs());
        InequalityReport {
            name: name.to_string(),
            lhs,
            rhs,
            se,
            pass: lhs <= rhs + tol,
            n_mc: samples.len(),
            slack: rhs - lhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    pub n: u64,
    /// Constant `L²(1 ∨ c_f)/ε` used in the f-descent bound.
    pub c_eps: f64,
    pub w_drift: InequalityReport,
    pub f_descent: InequalityReport,
    /// `γ²(1 + σ²d + γ²σ⁴d²)`.
    pub s_n: f64,
    /// `γ p (γ² + 2σ²d + 2γ²σ⁴d²)`.
    pub t_n: f64,
}

impl DescentReport {
    pub fn all_pass(&self) -> bool {
        self.w_drift.pass && self.f_descent.pass
    }
}

pub const MIN_DESCENT_SAMPLES: usize = 1000;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimates the conditional one-step drifts of `Σ(w+ε)` and `f` from
/// `state` by `n_mc` simulated steps and compares them with their bounds.
pub fn descent_check(
    state: &ParamState,
    obj: &dyn Objective,
    set: &ScheduleSet,
    model: &NoiseModel,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<DescentReport, DiagError> {
    if n_mc < MIN_DESCENT_SAMPLES {
        return Err(DiagError::InvalidArgument(format!("n_mc must be at least {MIN_DESCENT_SAMPLES}")));
    }
    if state.n == 0 {
        return Err(DiagError::InvalidArgument("state index starts at 1".into()));
    }
    let d = obj.dim();
    let sp = eval_schedules(set, state.n);
    let (gamma, p, q, sigma, eps) = (sp.gamma, sp.p, sp.q, sp.sigma, set.eps);
    let hf = obj.constants();
    let c_eps = hf.lipschitz * hf.lipschitz * hf.growth.max(1.0) / eps;

    let f0 = obj.value(&state.theta);
    let grad = obj.grad(&state.theta);
    let sum_w: f64 = state.w.iter().sum();
    let sum_we: f64 = state.w.iter().map(|w| w + eps).sum();
    let scaled_grad: f64 = grad
        .iter()
        .zip(&state.w)
        .map(|(g, w)| g * g / (w + eps).sqrt())
        .sum();
    let sigma2 = sigma * sigma;
    let dd = d as f64;

    let rhs_w = sum_we - q * gamma * sum_w + gamma * p * norm_sq(&grad) + gamma * sigma2 * p * (dd + f0);
    let rhs_f = f0 * (1.0 + c_eps * gamma * gamma) + c_eps * dd * gamma * gamma * sigma2 - gamma * scaled_grad;

    let f_noise = if model.needs_value() { f0 } else { 0.0 };
    let mut zeta = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut w_samples = Vec::with_capacity(n_mc);
    let mut f_samples = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        model.sample_into(f_noise, rng, &mut zeta);
        let mut w_next = 0.0;
        for i in 0..d {
            let g = grad[i] + sigma * zeta[i];
            theta[i] = state.theta[i] - gamma * g / (state.w[i] + eps).sqrt();
            w_next += state.w[i] + gamma * (p * g * g - q * state.w[i]) + eps;
        }
        w_samples.push(w_next);
        f_samples.push(obj.value(&theta));
    }

    let g2 = gamma * gamma;
    Ok(DescentReport {
        n: state.n,
        c_eps,
        w_drift: InequalityReport::new("w_drift", &w_samples, rhs_w),
        f_descent: InequalityReport::new("f_descent", &f_samples, rhs_f),
        s_n: g2 * (1.0 + sigma2 * dd + g2 * sigma2 * sigma2 * dd * dd),
        t_n: gamma * p * (g2 + 2.0 * sigma2 * dd + 2.0 * g2 * sigma2 * sigma2 * dd * dd),
    })
}

/// Limit parameters of the mean field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub p_inf: f64,
    pub q_inf: f64,
    pub eps: f64,
}

impl FieldParams {
    pub fn from_schedules(set: &ScheduleSet) -> Self {
        FieldParams {
            p_inf: set.p_inf(),
            q_inf: set.q_inf(),
            eps: set.eps,
        }
    }
}

/// `H(θ, w) = (−∇f/√(w+ε), p_∞ ∇f² − q_∞ w)`.
pub fn vector_field_h(theta: &[f64], w: &[f64], fp: &FieldParams, obj: &dyn Objective) -> (Vec<f64>, Vec<f64>) {
    let grad = obj.grad(theta);
    let mut dtheta = vec![0.0; theta.len()];
    let mut dw = vec![0.0; w.len()];
    field_into(&grad, w, fp, &mut dtheta, &mut dw);
    (dtheta, dw)
}

fn field_into(grad: &[f64], w: &[f64], fp: &FieldParams, dtheta: &mut [f64], dw: &mut [f64]) {
    for i in 0..grad.len() {
        dtheta[i] = -grad[i] / (w[i] + fp.eps).sqrt();
        dw[i] = fp.p_inf * grad[i] * grad[i] - fp.q_inf * w[i];
    }
}

/// Point `(θ, w)` of the joint state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
}

impl Point {
    pub fn new(theta: Vec<f64>, w: Vec<f64>) -> Self {
        Point { theta, w }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let a = distance(&self.theta, &other.theta);
        let b = distance(&self.w, &other.w);
        (a * a + b * b).sqrt()
    }
}

struct Rk4<'a> {
    obj: &'a dyn Objective,
    fp: FieldParams,
    grad: Vec<f64>,
    k: [(Vec<f64>, Vec<f64>); 4],
    tmp: Point,
}

impl<'a> Rk4<'a> {
    fn new(obj: &'a dyn Objective, fp: FieldParams) -> Self {
        let d = obj.dim();
        let z = || (vec![0.0; d], vec![0.0; d]);
        Rk4 {
            obj,
            fp,
            grad: vec![0.0; d],
            k: [z(), z(), z(), z()],
            tmp: Point::new(vec![0.0; d], vec![0.0; d]),
        }
    }

    fn eval(&mut self, stage: usize, at_tmp: bool, z: &Point) {
        let p = if at_tmp { &self.tmp } else { z };
        self.obj.grad_into(&p.theta, &mut self.grad);
        let (kt, kw) = &mut self.k[stage];
        field_into(&self.grad, &p.w, &self.fp, kt, kw);
    }

    fn stage_point(&mut self, z: &Point, stage: usize, c: f64) {
        let (kt, kw) = &self.k[stage];
        for i in 0..z.theta.len() {
            self.tmp.theta[i] = z.theta[i] + c * kt[i];
            self.tmp.w[i] = z.w[i] + c * kw[i];
        }
    }

    fn step(&mut self, z: &mut Point, h: f64) {
        self.eval(0, false, z);
        self.stage_point(z, 0, h / 2.0);
        self.eval(1, true, z);
        self.stage_point(z, 1, h / 2.0);
        self.eval(2, true, z);
        self.stage_point(z, 2, h);
        self.eval(3, true, z);
        let [(a, aw), (b, bw), (c, cw), (e, ew)] = &self.k;
        for i in 0..z.theta.len() {
            z.theta[i] += h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + e[i]);
            z.w[i] += h / 6.0 * (aw[i] + 2.0 * bw[i] + 2.0 * cw[i] + ew[i]);
        }
    }

    /// Advances `z` by `span` in equal sub-steps no longer than `h`.
    fn advance(&mut self, z: &mut Point, span: f64, h: f64, t0: f64) -> Result<(), DiagError> {
        if span <= 0.0 {
            return Ok(());
        }
        let steps = (span / h).ceil().max(1.0) as u64;
        let hh = span / steps as f64;
        for k in 0..steps {
            self.step(z, hh);
            if !all_finite(&z.theta) || !all_finite(&z.w) || z.w.iter().any(|&w| w + self.fp.eps <= 0.0) {
                return Err(DiagError::NonFiniteState {
                    time: t0 + (k + 1) as f64 * hh,
                });
            }
        }
        Ok(())
    }
}

/// Classical RK4 integration of `ż = H(z)` up to time `t_end`.
pub fn flow(obj: &dyn Objective, fp: &FieldParams, z0: &Point, t_end: f64, h: f64) -> Result<Point, DiagError> {
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(DiagError::InvalidArgument("need h > 0 and T >= 0".into()));
    }
    let mut z = z0.clone();
    Rk4::new(obj, *fp).advance(&mut z, t_end, h, 0.0)?;
    Ok(z)
}

/// Default integrator step for horizon `T`.
pub fn default_flow_step(t_end: f64) -> f64 {
    if t_end > 0.0 {
        (1e-2f64).min(t_end / 100.0)
    } else {
        1e-2
    }
}

fn interpolate(tau: &[f64], zs: &[Vec<f64>], k: usize, t: f64) -> Vec<f64> {
    // tau[k] <= t <= tau[k + 1]
    if k + 1 >= tau.len() || tau[k + 1] == tau[k] {
        return zs[k].clone();
    }
    let lam = (t - tau[k]) / (tau[k + 1] - tau[k]);
    zs[k].iter().zip(&zs[k + 1]).map(|(a, b)| a + lam * (b - a)).collect()
}

/// For each checkpoint `t`, the sup over `u ∈ [0, T]` of the distance between
/// the interpolated trajectory at `t + u` and the flow of `H` started from
/// the interpolated point at `t`. The sup is taken over the trajectory's own
/// time grid inside the window plus both endpoints.
pub fn apt_deviation(
    record: &RunRecord,
    obj: &dyn Objective,
    set: &ScheduleSet,
    t_window: f64,
    checkpoints: &[f64],
) -> Result<Vec<f64>, DiagError> {
    let traj = record
        .trajectory
        .as_ref()
        .ok_or_else(|| DiagError::InsufficientHistory("run did not record its trajectory".into()))?;
    let tau = &traj.tau;
    if !(t_window >= 0.0) {
        return Err(DiagError::InvalidArgument("T must be non-negative".into()));
    }
    let (first, last) = (tau[0], *tau.last().unwrap());
    let fp = FieldParams::from_schedules(set);
    let h = default_flow_step(t_window);
    let mut rk = Rk4::new(obj, fp);

    let locate = |t: f64| -> usize {
        // last k with tau[k] <= t
        tau.partition_point(|&x| x <= t).saturating_sub(1)
    };
    let at = |t: f64| -> Point {
        let k = locate(t);
        Point::new(interpolate(tau, &traj.theta, k, t), interpolate(tau, &traj.w, k, t))
    };

    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        if t < first || t + t_window > last {
            return Err(DiagError::InsufficientHistory(format!(
                "window [{t}, {}] not covered by [{first}, {last}]",
                t + t_window
            )));
        }
        let mut z = at(t);
        let mut worst = 0.0f64;
        let mut u_prev = 0.0;
        let mut grid: Vec<f64> = tau[locate(t) + 1..]
            .iter()
            .take_while(|&&x| x < t + t_window)
            .map(|&x| x - t)
            .filter(|&u| u > 0.0)
            .collect();
        grid.push(t_window);
        for u in grid {
            rk.advance(&mut z, u - u_prev, h, t + u_prev)?;
            u_prev = u;
            worst = worst.max(z.distance(&at(t + u)));
        }
        out.push(worst);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub stability: Stability,
    /// Eigenvalues of `D²f(θ*)`, descending.
    pub hessian_eigenvalues: Vec<f64>,
    /// Eigenvalues of the linearised field, `−λ/√ε` for each Hessian
    /// eigenvalue `λ` followed by `−q_∞` repeated `d` times.
    pub linearization_eigenvalues: Vec<f64>,
    pub analytic_hessian: bool,
}

pub const HESSIAN_FD_STEP: f64 = 1e-4;
pub const CRITICAL_TOLERANCE: f64 = 1e-8;

/// Symmetrised central-difference Hessian built from the gradient.
pub fn fd_hessian(obj: &dyn Objective, theta: &[f64], h: f64) -> DMatrix<f64> {
    let d = theta.len();
    let mut hm = DMatrix::zeros(d, d);
    let mut x = theta.to_vec();
    for j in 0..d {
        x[j] = theta[j] + h;
        let gp = obj.grad(&x);
        x[j] = theta[j] - h;
        let gm = obj.grad(&x);
        x[j] = theta[j];
        for i in 0..d {
            hm[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    (&hm + hm.transpose()) * 0.5
}

/// Stability of the equilibrium `(θ*, 0)` of `H` from the spectrum of
/// `block-diag(−D²f(θ*)/√ε, −q_∞ I)`.
pub fn classify_equilibrium(obj: &dyn Objective, theta_star: &[f64], q_inf: f64, eps: f64) -> Result<EquilibriumReport, DiagError> {
    if !(eps > 0.0) || !(q_inf > 0.0) {
        return Err(DiagError::InvalidArgument("need eps > 0 and q_inf > 0".into()));
    }
    let grad_norm = norm(&obj.grad(theta_star));
    if !(grad_norm <= CRITICAL_TOLERANCE) {
        return Err(DiagError::NotACriticalPoint { grad_norm });
    }
    let (hess, analytic) = match obj.hessian(theta_star) {
        Some(h) => (h, true),
        None => (fd_hessian(obj, theta_star, HESSIAN_FD_STEP), false),
    };
    let mut eig: Vec<f64> = SymmetricEigen::new(hess).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let scale = if analytic { 1e-12 } else { 1e-6 };
    let stability = if eig.iter().any(|&l| l < -scale) {
        Stability::Unstable
    } else if eig.iter().all(|&l| l > scale) {
        Stability::Stable
    } else {
        return Err(DiagError::NonHyperbolic);
    };
    let root = eps.sqrt();
    let mut lin: Vec<f64> = eig.iter().map(|l| -l / root).collect();
    lin.extend(std::iter::repeat_n(-q_inf, theta_star.len()));
    Ok(EquilibriumReport {
        stability,
        hessian_eigenvalues: eig,
        linearization_eigenvalues: lin,
        analytic_hessian: analytic,
    })
}
