//! Experiment drivers.
//!
//! Independent runs fan out over a rayon pool and are collected in job
//! order, so results do not depend on the worker count. Run `i` of a batch
//! uses seed `base_seed + i`; batches within one experiment are told apart
//! by the ChaCha stream id.

use super::config::{Beta2Variant, ExperimentConfig, ObjectiveKind, RateSetting};
use super::output::Table;
use super::HarnessError;
use crate::coordwise::distance;
use crate::diagnostics::rate_metric;
use crate::noise::{NoiseModel, RngStream};
use crate::objectives::{saddle_objective, Objective};
use crate::optimizer::{
    run, run_constant, step_historical, step_rescaled, HistState, RescaledState, RunError, RunOptions, RunRecord,
};
use crate::schedules::{classify_regime, validate_assumptions, Beta2Schedule, PowerSeq, Regime, ValidationReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub fn run_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// Maps `f` over `items` on `workers` threads, preserving order.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>, HarnessError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Experiment(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Least-squares slope of `ln y` against `ln x`; needs at least three
/// positive points.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 3 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn experiment_err(e: impl ToString) -> HarnessError {
    HarnessError::Experiment(e.to_string())
}

fn require_assumptions(cfg: &ExperimentConfig, report: &ValidationReport, what: &str) -> Result<(), HarnessError> {
    if cfg.override_assumptions || report.all_pass() {
        return Ok(());
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    Err(HarnessError::Config(format!(
        "{what}: step-size assumptions violated ({}); pass --override-assumptions to run anyway",
        failed.join(", ")
    )))
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub final_w_norm: f64,
    pub min_w: f64,
    pub sum_grad: f64,
    pub sum_w: f64,
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub config_hash: String,
    pub summaries: Vec<RunSummary>,
    pub records: Vec<RunRecord>,
}

impl RunOutcome {
    pub fn diverged(&self) -> usize {
        self.summaries.iter().filter(|s| s.diverged_at.is_some()).count()
    }
}

/// `M` seeded runs of the schedule in `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let set = cfg.schedule()?;
    require_assumptions(cfg, &validate_assumptions(&set), "run")?;
    let obj = cfg.objective_for(cfg.dim)?;
    let model = cfg.noise_for(cfg.dim)?;
    let theta0 = cfg.start_for(cfg.dim);
    let w0 = vec![0.0; cfg.dim];
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| run_seed(cfg.base_seed, i)).collect();
    let records = par_map(cfg.workers, &seeds, |&seed| {
        let opts = RunOptions::new(cfg.n_steps, seed)
            .thinning(cfg.thinning)
            .minibatch(cfg.minibatch_mode)
            .override_assumptions(true);
        match run(obj.as_ref(), &set, &model, &theta0, &w0, &opts) {
            Ok(r) => Ok(r),
            Err(RunError::NonFiniteState { partial, .. }) => Ok(*partial),
            Err(e) => Err(e),
        }
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(experiment_err)?;
    let summaries = records
        .iter()
        .map(|r| RunSummary {
            seed: r.seed,
            final_f: obj.value(&r.final_state.theta),
            final_grad_norm: r.final_grad_norm(obj.as_ref()),
            final_w_norm: r.final_w_norm(),
            min_w: r.min_w,
            sum_grad: r.accumulators.sum_grad,
            sum_w: r.accumulators.sum_w,
            diverged_at: r.diverged_at,
        })
        .collect();
    Ok(RunOutcome {
        config_hash: cfg.hash(),
        summaries,
        records,
    })
}

pub fn run_table(out: &RunOutcome) -> Table {
    let mut t = Table::new(
        "run: thinned diagnostic series, one block per seed",
        &[
            ("config_hash", "hash of the effective configuration"),
            ("seed", "run seed"),
            ("n", "state index (iterates start at 1)"),
            ("f", "objective value"),
            ("grad_sq", "squared gradient norm"),
            ("grad_l1sq", "squared l1 norm of the gradient"),
            ("w_norm", "norm of the scaling vector w"),
            ("lyapunov", "Lyapunov value with tuned (a, b)"),
            ("sum_grad", "partial sum of gamma * grad_l1sq"),
            ("sum_w", "partial sum of gamma * q * sum(w)"),
        ],
    );
    t.note(format!("config_hash={}", out.config_hash));
    for r in &out.records {
        for p in &r.series {
            t.push(vec![
                out.config_hash.as_str().into(),
                r.seed.into(),
                p.n.into(),
                p.f.into(),
                p.grad_sq.into(),
                p.grad_l1sq.into(),
                p.w_norm.into(),
                p.lyapunov.into(),
                p.sum_grad.into(),
                p.sum_w.into(),
            ]);
        }
    }
    t
}

// ---------------------------------------------------------------- rate study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub setting: RateSetting,
    pub d: usize,
    pub n: u64,
    pub seeds: usize,
    pub gamma: f64,
    pub pq: f64,
    pub sigma_sq: f64,
    pub metric_mean: f64,
    pub metric_se: f64,
    /// Smallest coordinate of `w` over every run in the row.
    pub min_w: f64,
    /// Oracle cost `N / σ²`.
    pub cost: f64,
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub setting: RateSetting,
    pub d: usize,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub config_hash: String,
    pub base_seed: u64,
    pub rows: Vec<RateRow>,
    pub fits: Vec<SlopeFit>,
}

impl RateStudy {
    pub fn row(&self, setting: RateSetting, d: usize, n: u64) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.setting == setting && r.d == d && r.n == n)
    }

    pub fn slope(&self, setting: RateSetting, d: usize) -> Option<f64> {
        self.fits.iter().find(|f| f.setting == setting && f.d == d).and_then(|f| f.slope)
    }
}

/// Constant-parameter runs over the `(setting, d, N)` grid; the metric is
/// averaged over `M` seeds and a log-log slope is fitted per `(setting, d)`.
pub fn rate_study(cfg: &ExperimentConfig) -> Result<RateStudy, HarnessError> {
    let dims = cfg.rate_dims();
    if cfg.objective == ObjectiveKind::Saddle && dims.iter().any(|&d| d != 2) {
        return Err(HarnessError::Config("the saddle objective needs every dimension to be 2".into()));
    }
    if cfg.settings.is_empty() {
        return Err(HarnessError::Config("rate study needs at least one setting".into()));
    }
    struct Group {
        setting: RateSetting,
        d: usize,
        n: u64,
    }
    let mut groups = Vec::new();
    for &setting in &cfg.settings {
        for &d in &dims {
            for &n in &cfg.n_grid {
                groups.push(Group { setting, d, n });
            }
        }
    }
    let mut objectives = Vec::new();
    for &d in &dims {
        objectives.push((d, cfg.objective_for(d)?, cfg.noise_for(d)?, cfg.start_for(d)));
    }
    let jobs: Vec<(usize, usize)> = (0..groups.len()).flat_map(|g| (0..cfg.seeds).map(move |i| (g, i))).collect();
    let metrics = par_map(cfg.workers, &jobs, |&(g, i)| -> Result<(f64, f64), String> {
        let grp = &groups[g];
        let (_, obj, model, theta0) = objectives.iter().find(|o| o.0 == grp.d).expect("objective per dim");
        let params = grp.setting.params(grp.d, grp.n, cfg.eps);
        let opts = RunOptions::new(grp.n, run_seed(cfg.base_seed, i))
            .stream(g as u64)
            .thinning(grp.n)
            .minibatch(cfg.minibatch_mode);
        let rec = run_constant(obj.as_ref(), params, model, theta0, &vec![0.0; grp.d], &opts).map_err(|e| e.to_string())?;
        let m = rate_metric(&rec, grp.n as usize).map_err(|e| e.to_string())?;
        Ok((m, rec.min_w))
    })?;

    let mut rows = Vec::with_capacity(groups.len());
    for (g, grp) in groups.iter().enumerate() {
        let block = metrics[g * cfg.seeds..(g + 1) * cfg.seeds]
            .iter()
            .cloned()
            .collect::<Result<Vec<(f64, f64)>, String>>()
            .map_err(experiment_err)?;
        let ms: Vec<f64> = block.iter().map(|b| b.0).collect();
        let min_w = block.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
        let (mean, se) = mean_se(&ms);
        let p = grp.setting.params(grp.d, grp.n, cfg.eps);
        rows.push(RateRow {
            setting: grp.setting,
            d: grp.d,
            n: grp.n,
            seeds: cfg.seeds,
            gamma: p.gamma,
            pq: p.p,
            sigma_sq: p.sigma_sq,
            metric_mean: mean,
            metric_se: se,
            min_w,
            cost: grp.n as f64 / p.sigma_sq,
            metrics: ms,
        });
    }
    let mut fits = Vec::new();
    for &setting in &cfg.settings {
        for &d in &dims {
            let sel: Vec<&RateRow> = rows.iter().filter(|r| r.setting == setting && r.d == d).collect();
            let xs: Vec<f64> = sel.iter().map(|r| r.n as f64).collect();
            let ys: Vec<f64> = sel.iter().map(|r| r.metric_mean).collect();
            fits.push(SlopeFit {
                setting,
                d,
                slope: loglog_slope(&xs, &ys),
            });
        }
    }
    Ok(RateStudy {
        config_hash: cfg.hash(),
        base_seed: cfg.base_seed,
        rows,
        fits,
    })
}

pub fn rate_table(study: &RateStudy) -> Table {
    let mut t = Table::new(
        "rate-study: mean rate metric over seeds per (setting, d, N)",
        &[
            ("config_hash", "hash of the effective configuration"),
            ("seed", "base seed; run i uses seed + i on the row's stream"),
            ("setting", "parameter setting (i, ii, iii, iv, control)"),
            ("d", "dimension"),
            ("n", "horizon N"),
            ("seeds", "number of runs M"),
            ("gamma", "constant step size"),
            ("pq", "constant p = q"),
            ("sigma_sq", "noise variance"),
            ("metric_mean", "mean over runs of (1/N) sum_k grad_l1sq(grad f(theta_k))"),
            ("metric_se", "standard error of metric_mean"),
            ("min_w", "smallest coordinate of w over the row's runs"),
            ("cost", "oracle cost N / sigma_sq"),
            ("slope", "least-squares log-log slope of metric_mean against N for this (setting, d)"),
        ],
    );
    t.note(format!("config_hash={}", study.config_hash));
    for r in &study.rows {
        let slope = study.slope(r.setting, r.d).unwrap_or(f64::NAN);
        t.push(vec![
            study.config_hash.as_str().into(),
            study.base_seed.into(),
            r.setting.label().into(),
            r.d.into(),
            r.n.into(),
            r.seeds.into(),
            r.gamma.into(),
            r.pq.into(),
            r.sigma_sq.into(),
            r.metric_mean.into(),
            r.metric_se.into(),
            r.min_w.into(),
            r.cost.into(),
            slope.into(),
        ]);
    }
    t
}

// ---------------------------------------------------------------- trap study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub beta: f64,
    pub r: f64,
    pub s: f64,
    pub regime: Regime,
    pub guarantee: String,
    pub runs: usize,
    pub escapes: usize,
    pub diverged: usize,
    pub escape_fraction: f64,
    pub final_abs_y: Vec<f64>,
    /// Smallest coordinate of `w` over the runs that finished.
    pub min_w: f64,
    /// Final `|y|` of the noiseless run started exactly at the saddle.
    pub control_abs_y: Option<f64>,
    pub control_escaped: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapStudy {
    pub config_hash: String,
    pub base_seed: u64,
    pub n_steps: u64,
    pub rho: f64,
    pub y_star: f64,
    pub cells: Vec<PhaseCell>,
}

impl TrapStudy {
    /// Mean escape fraction over the cells in `regime`.
    pub fn mean_escape(&self, regime: Regime) -> Option<f64> {
        let xs: Vec<f64> = self.cells.iter().filter(|c| c.regime == regime).map(|c| c.escape_fraction).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Uniform draw from the ball of radius `rho` around `center`.
pub fn ball_perturbation(center: &[f64], rho: f64, rng: &mut RngStream) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: f64 = rand::Rng::random(rng.rng());
    let radius = rho * u.powf(1.0 / d as f64);
    center
        .iter()
        .zip(&dir)
        .map(|(c, x)| c + if norm > 0.0 { radius * x / norm } else { 0.0 })
        .collect()
}

/// Runs `M` perturbed starts per `(β, r, s)` cell on the saddle objective and
/// records how many end near a minimizer (`|y| ≥ y*/2`).
pub fn trap_study(cfg: &ExperimentConfig) -> Result<TrapStudy, HarnessError> {
    if cfg.objective != ObjectiveKind::Saddle {
        return Err(HarnessError::Config("trap study needs objective = \"saddle\"".into()));
    }
    if cfg.cells.is_empty() {
        return Err(HarnessError::Config("trap study needs at least one cell".into()));
    }
    let obj = saddle_objective();
    let model = cfg.noise_for(2)?;
    let y_star = obj.y_star();
    let saddle = obj.saddle_point().to_vec();

    let mut sets = Vec::new();
    for c in &cfg.cells {
        let set = cfg.schedule_for(c.beta, c.r, c.s)?;
        let regime = classify_regime(c.beta, c.r, c.s);
        if !cfg.override_assumptions && regime == Regime::Invalid {
            return Err(HarnessError::Config(format!(
                "cell ({}, {}, {}) is outside every guarantee region; pass --override-assumptions to run it",
                c.beta, c.r, c.s
            )));
        }
        require_assumptions(cfg, &validate_assumptions(&set), &format!("cell ({}, {}, {})", c.beta, c.r, c.s))?;
        sets.push((set, regime));
    }

    let jobs: Vec<(usize, usize)> = (0..sets.len()).flat_map(|c| (0..cfg.seeds).map(move |i| (c, i))).collect();
    let finals = par_map(cfg.workers, &jobs, |&(c, i)| -> Result<Option<(f64, f64)>, String> {
        let seed = run_seed(cfg.base_seed, i);
        let mut prng = RngStream::with_stream(seed, 2 * c as u64 + 1);
        let theta0 = ball_perturbation(&saddle, cfg.rho, &mut prng);
        let opts = RunOptions::new(cfg.n_steps, seed)
            .stream(2 * c as u64)
            .thinning(cfg.n_steps.max(1))
            .minibatch(cfg.minibatch_mode)
            .override_assumptions(true);
        match run(&obj, &sets[c].0, &model, &theta0, &[0.0, 0.0], &opts) {
            Ok(r) => Ok(Some((r.final_state.theta[1].abs(), r.min_w))),
            Err(RunError::NonFiniteState { .. }) => Ok(None),
            Err(e) => Err(e.to_string()),
        }
    })?;

    let controls = if cfg.noiseless_control {
        let idx: Vec<usize> = (0..sets.len()).collect();
        par_map(cfg.workers, &idx, |&c| -> Result<f64, String> {
            let mut set = sets[c].0.clone();
            set.sigma = PowerSeq::new(0.0, set.sigma.exponent);
            let opts = RunOptions::new(cfg.n_steps, cfg.base_seed)
                .thinning(cfg.n_steps.max(1))
                .override_assumptions(true);
            run(&obj, &set, &model, &saddle, &[0.0, 0.0], &opts)
                .map(|r| r.final_state.theta[1].abs())
                .map_err(|e| e.to_string())
        })?
        .into_iter()
        .map(|r| r.map(Some))
        .collect::<Result<Vec<_>, _>>()
        .map_err(experiment_err)?
    } else {
        vec![None; sets.len()]
    };

    let mut cells = Vec::with_capacity(sets.len());
    for (c, spec) in cfg.cells.iter().enumerate() {
        let block = &finals[c * cfg.seeds..(c + 1) * cfg.seeds];
        let mut ys = Vec::with_capacity(cfg.seeds);
        let (mut escapes, mut diverged) = (0, 0);
        let mut min_w = f64::INFINITY;
        for r in block {
            match r.clone().map_err(experiment_err)? {
                Some((y, mw)) => {
                    min_w = min_w.min(mw);
                    if y >= y_star / 2.0 {
                        escapes += 1;
                    }
                    ys.push(y);
                }
                None => {
                    diverged += 1;
                    ys.push(f64::INFINITY);
                }
            }
        }
        let regime = sets[c].1;
        cells.push(PhaseCell {
            beta: spec.beta,
            r: spec.r,
            s: spec.s,
            regime,
            guarantee: regime.guarantee().to_string(),
            runs: cfg.seeds,
            escapes,
            diverged,
            escape_fraction: escapes as f64 / cfg.seeds as f64,
            final_abs_y: ys,
            min_w,
            control_abs_y: controls[c],
            control_escaped: controls[c].map(|y| y >= y_star / 2.0),
        });
    }
    Ok(TrapStudy {
        config_hash: cfg.hash(),
        base_seed: cfg.base_seed,
        n_steps: cfg.n_steps,
        rho: cfg.rho,
        y_star,
        cells,
    })
}

pub fn trap_table(study: &TrapStudy) -> Table {
    let mut t = Table::new(
        "trap-study: escape from the saddle per (beta, r, s) cell",
        &[
            ("config_hash", "hash of the effective configuration"),
            ("seed", "base seed; run i uses seed + i"),
            ("beta", "step-size exponent"),
            ("r", "p-sequence exponent"),
            ("s", "noise (mini-batch) exponent"),
            ("regime", "predicted regime"),
            ("guarantee", "what the regime guarantees"),
            ("runs", "number of runs"),
            ("escapes", "runs ending with |y| >= y*/2"),
            ("diverged", "runs aborted by the divergence guard (counted as not escaped)"),
            ("escape_fraction", "escapes / runs"),
            ("min_w", "smallest coordinate of w over the cell's finished runs"),
            ("control_abs_y", "final |y| of the noiseless run started at the saddle"),
        ],
    );
    t.note(format!("config_hash={}", study.config_hash));
    t.note(format!(
        "n_steps={} rho={} y_star={}",
        study.n_steps,
        super::output::fmt_f64(study.rho),
        super::output::fmt_f64(study.y_star)
    ));
    for c in &study.cells {
        t.push(vec![
            study.config_hash.as_str().into(),
            study.base_seed.into(),
            c.beta.into(),
            c.r.into(),
            c.s.into(),
            c.regime.to_string().into(),
            c.guarantee.as_str().into(),
            c.runs.into(),
            c.escapes.into(),
            c.diverged.into(),
            c.escape_fraction.into(),
            c.min_w.into(),
            c.control_abs_y.unwrap_or(f64::NAN).into(),
        ]);
    }
    t
}

// ---------------------------------------------------------------- equivalence

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// `max_n ‖θ̃_n − θ_n‖`.
    pub theta: f64,
    /// `max_n max_i |w̃_{n,i} − v_{n,i}/S_n|`.
    pub w: f64,
}

/// Runs the historical and rescaled recursions side by side. Each evaluates
/// the gradient at its own iterate; both add the same noise draw.
#[allow(clippy::too_many_arguments)]
pub fn historical_vs_rescaled(
    obj: &dyn Objective,
    model: &NoiseModel,
    alpha: &PowerSeq,
    b2: &Beta2Schedule,
    eps_tilde: f64,
    sigma: f64,
    theta0: &[f64],
    n_steps: u64,
    seed: u64,
) -> Result<Deviation, HarnessError> {
    let d = obj.dim();
    let mut rng = RngStream::new(seed);
    let mut hist = HistState {
        theta: theta0.to_vec(),
        v: vec![0.0; d],
        n: 0,
    };
    let mut resc = RescaledState {
        theta: theta0.to_vec(),
        w: vec![0.0; d],
        n: 0,
    };
    let mut zeta = vec![0.0; d];
    let mut s = 1.0;
    let mut dev = Deviation { theta: 0.0, w: 0.0 };
    for n in 0..n_steps {
        model.sample_into(0.0, &mut rng, &mut zeta);
        let mut gh = obj.grad(&hist.theta);
        let mut gr = obj.grad(&resc.theta);
        for i in 0..d {
            gh[i] += sigma * zeta[i];
            gr[i] += sigma * zeta[i];
        }
        let b = b2.value(n);
        let s_next = b * s + 1.0;
        let a = alpha.value(n + 1);
        hist = step_historical(&hist, &gh, a, b, eps_tilde).map_err(experiment_err)?;
        resc = step_rescaled(&resc, &gr, a / s.sqrt(), s, s_next, eps_tilde).map_err(experiment_err)?;
        s = s_next;
        dev.theta = dev.theta.max(distance(&hist.theta, &resc.theta));
        for (w, v) in resc.w.iter().zip(&hist.v) {
            dev.w = dev.w.max((w - v / s).abs());
        }
    }
    Ok(dev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivRow {
    pub variant: Beta2Variant,
    pub schedule: Beta2Schedule,
    pub max_theta_deviation: f64,
    pub max_w_deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivReport {
    pub config_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub n_steps: u64,
    pub tolerance: f64,
    pub rows: Vec<EquivRow>,
}

impl EquivReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Historical vs rescaled trajectories for each `β₂` regime on one shared
/// noise stream.
pub fn equiv_check(cfg: &ExperimentConfig) -> Result<EquivReport, HarnessError> {
    let d = cfg.equiv_dims;
    if d == 0 {
        return Err(HarnessError::Config("equiv_dims must be positive".into()));
    }
    let mut c = cfg.clone();
    c.dim = d;
    c.center = None;
    c.curvature = None;
    c.theta0 = None;
    c.noise_cov_diag = None;
    c.objective = ObjectiveKind::Quadratic;
    let obj = c.objective_for(d)?;
    let model = c.noise_for(d)?;
    let theta0 = c.start_for(d);
    let variants = cfg.beta2_variants();
    let rows = par_map(cfg.workers, &variants, |(variant, b2)| {
        historical_vs_rescaled(obj.as_ref(), &model, &cfg.alpha(), b2, cfg.eps, cfg.sigma1, &theta0, cfg.n_steps, cfg.base_seed)
            .map(|dev| EquivRow {
                variant: *variant,
                schedule: *b2,
                max_theta_deviation: dev.theta,
                max_w_deviation: dev.w,
                pass: dev.theta <= cfg.equiv_tolerance,
            })
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(EquivReport {
        config_hash: cfg.hash(),
        seed: cfg.base_seed,
        dim: d,
        n_steps: cfg.n_steps,
        tolerance: cfg.equiv_tolerance,
        rows,
    })
}

pub fn equiv_table(rep: &EquivReport) -> Table {
    let mut t = Table::new(
        "equiv-check: historical vs rescaled trajectories on a shared noise stream",
        &[
            ("config_hash", "hash of the effective configuration"),
            ("seed", "noise seed"),
            ("variant", "beta2 regime"),
            ("d", "dimension"),
            ("n_steps", "number of steps"),
            ("max_theta_deviation", "max over n of |theta_rescaled - theta_historical|"),
            ("max_w_deviation", "max over n, i of |w_rescaled - v / S_n|"),
            ("pass", "max_theta_deviation <= tolerance"),
        ],
    );
    t.note(format!("config_hash={}", rep.config_hash));
    t.note(format!("tolerance={}", super::output::fmt_f64(rep.tolerance)));
    for r in &rep.rows {
        let v = serde_json::to_value(r.variant).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        t.push(vec![
            rep.config_hash.as_str().into(),
            rep.seed.into(),
            v.into(),
            rep.dim.into(),
            rep.n_steps.into(),
            r.max_theta_deviation.into(),
            r.max_w_deviation.into(),
            r.pass.into(),
        ]);
    }
    t
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub setting: RateSetting,
    pub d: usize,
    pub delta: f64,
    pub required_n: f64,
    pub sigma_sq: f64,
    pub cost: f64,
    pub order: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateOutcome {
    pub config_hash: String,
    pub seed: u64,
    pub report: ValidationReport,
    pub regime: Regime,
    pub guarantee: String,
    pub costs: Vec<CostRow>,
}

impl ValidateOutcome {
    pub fn cost(&self, setting: RateSetting, d: usize, delta: f64) -> Option<&CostRow> {
        self.costs.iter().find(|c| c.setting == setting && c.d == d && c.delta == delta)
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Result<ValidateOutcome, HarnessError> {
    let set = cfg.schedule()?;
    let regime = classify_regime(cfg.beta, cfg.r, cfg.s);
    let mut costs = Vec::new();
    for setting in RateSetting::ALL {
        for d in cfg.rate_dims() {
            for &delta in &cfg.deltas {
                let (Some(n), Some(cost)) = (setting.required_horizon(d, delta), setting.cost(d, delta)) else {
                    continue;
                };
                costs.push(CostRow {
                    setting,
                    d,
                    delta,
                    required_n: n,
                    sigma_sq: n / cost,
                    cost,
                    order: setting.cost_order().to_string(),
                });
            }
        }
    }
    Ok(ValidateOutcome {
        config_hash: cfg.hash(),
        seed: cfg.base_seed,
        report: validate_assumptions(&set),
        regime,
        guarantee: regime.guarantee().to_string(),
        costs,
    })
}

pub fn validate_text(v: &ValidateOutcome, cfg: &ExperimentConfig) -> String {
    let mut s = format!("schedule (beta, r, s) = ({}, {}, {})\n", cfg.beta, cfg.r, cfg.s);
    s.push_str(&v.report.to_string());
    s.push_str(&format!("regime: {} ({})\n", v.regime, v.guarantee));
    s.push_str("setting      d      delta   required_N       sigma^2          cost  order\n");
    for c in &v.costs {
        s.push_str(&format!(
            "{:<8} {:>5} {:>10.3e} {:>12.4e} {:>12.4e} {:>13.4e}  {}\n",
            c.setting.label(),
            c.d,
            c.delta,
            c.required_n,
            c.sigma_sq,
            c.cost,
            c.order
        ));
    }
    s
}

pub fn validate_table(v: &ValidateOutcome) -> Table {
    let mut t = Table::new(
        "validate: oracle cost of a delta-accurate rate per setting",
        &[
            ("config_hash", "hash of the effective configuration"),
            ("seed", "base seed (unused by this computation)"),
            ("setting", "parameter setting"),
            ("d", "dimension"),
            ("delta", "target accuracy"),
            ("required_n", "horizon N = (c delta)^-2 for step gamma = c / sqrt(N)"),
            ("sigma_sq", "noise variance at that horizon"),
            ("cost", "N / sigma_sq"),
            ("order", "order of the cost in d and delta"),
        ],
    );
    t.note(format!("config_hash={}", v.config_hash));
    t.note(format!("regime={} assumptions_pass={}", v.regime, v.report.all_pass()));
    for c in &v.costs {
        t.push(vec![
            v.config_hash.as_str().into(),
            v.seed.into(),
            c.setting.label().into(),
            c.d.into(),
            c.delta.into(),
            c.required_n.into(),
            c.sigma_sq.into(),
            c.cost.into(),
            c.order.as_str().into(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [100.0, 1000.0, 10000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&xs[..2], &ys[..2]), None);
    }

    #[test]
    fn ball_perturbation_stays_inside() {
        let mut rng = RngStream::new(3);
        for _ in 0..1000 {
            let p = ball_perturbation(&[1.0, -1.0], 1e-3, &mut rng);
            assert!(distance(&p, &[1.0, -1.0]) <= 1e-3);
        }
    }

    #[test]
    fn par_map_preserves_order() {
        let xs: Vec<u64> = (0..100).collect();
        let a = par_map(1, &xs, |x| x * x).unwrap();
        let b = par_map(4, &xs, |x| x * x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }

    #[test]
    fn zero_step_equivalence() {
        let mut cfg = ExperimentConfig::default();
        cfg.n_steps = 0;
        let rep = equiv_check(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows.iter().all(|r| r.max_theta_deviation == 0.0));
    }

    #[test]
    fn trap_rejects_invalid_cell_without_override() {
        let mut cfg = ExperimentConfig::default();
        cfg.objective = ObjectiveKind::Saddle;
        cfg.cells = vec![super::super::config::CellSpec { beta: 0.4, r: 0.2, s: 0.0 }];
        cfg.seeds = 2;
        cfg.n_steps = 100;
        assert!(matches!(trap_study(&cfg), Err(HarnessError::Config(_))));
        cfg.override_assumptions = true;
        let st = trap_study(&cfg).unwrap();
        assert_eq!(st.cells[0].regime, Regime::Invalid);
        assert_eq!(st.cells[0].guarantee, "no guarantee");
    }

    #[test]
    fn validate_costs() {
        let mut cfg = ExperimentConfig::default();
        cfg.dims = vec![10];
        let v = validate(&cfg).unwrap();
        let c = v.cost(RateSetting::I, 10, 0.1).unwrap();
        assert!((c.required_n - 1e4).abs() < 1e-6);
        assert!((c.cost - 100.0 * 0.1f64.powi(-2)).abs() < 1e-6);
        let c = v.cost(RateSetting::Iv, 10, 0.1).unwrap();
        assert!((c.cost - 10.0 * 0.1f64.powi(-2)).abs() < 1e-6);
    }
}
