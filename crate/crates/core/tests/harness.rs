use adasa::harness::config::{NoiseKindSpec, ObjectiveKind};
use adasa::harness::experiments::{historical_vs_rescaled, rate_study, trap_study};
use adasa::harness::{execute, CellSpec, Experiment, ExperimentConfig, HarnessError, RateSetting};
use adasa::noise::NoiseModel;
use adasa::objectives::isotropic_quadratic;
use adasa::schedules::{Beta2Schedule, PowerSeq, Regime};
use tempfile::TempDir;

fn trap_config(cells: Vec<CellSpec>, seeds: usize, n_steps: u64) -> ExperimentConfig {
    ExperimentConfig {
        objective: ObjectiveKind::Saddle,
        dim: 2,
        noise_kind: NoiseKindSpec::Elliptic,
        gamma1: 0.1,
        sigma1: 0.1,
        eps: 1e-2,
        rho: 1e-3,
        cells,
        seeds,
        n_steps,
        override_assumptions: true,
        ..ExperimentConfig::default()
    }
}

fn cell(beta: f64, r: f64, s: f64) -> CellSpec {
    CellSpec { beta, r, s }
}

fn outputs(exp: Experiment, cfg: &ExperimentConfig) -> (Vec<u8>, Vec<u8>) {
    let dir = TempDir::new().unwrap();
    execute(exp, cfg, dir.path()).unwrap();
    let stem = exp.file_stem();
    (
        std::fs::read(dir.path().join(format!("{stem}.csv"))).unwrap(),
        std::fs::read(dir.path().join(format!("{stem}.json"))).unwrap(),
    )
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let rate = ExperimentConfig {
        settings: vec![RateSetting::Ii, RateSetting::Iv],
        dims: vec![2, 5],
        n_grid: vec![50, 200, 800],
        seeds: 8,
        eps: 1e-2,
        ..ExperimentConfig::default()
    };
    let trap = trap_config(vec![cell(0.75, 0.5, 0.0), cell(0.4, 0.2, 0.0)], 6, 2_000);
    let run = ExperimentConfig {
        dim: 4,
        n_steps: 1_000,
        thinning: 100,
        seeds: 5,
        ..ExperimentConfig::default()
    };
    for (exp, cfg) in [(Experiment::RateStudy, rate), (Experiment::TrapStudy, trap), (Experiment::Run, run)] {
        let one = outputs(exp, &ExperimentConfig { workers: 1, ..cfg.clone() });
        let four = outputs(exp, &ExperimentConfig { workers: 4, ..cfg });
        assert!(one == four, "{exp:?} output changed with the worker count");
    }
}

#[test]
fn minimizer_cells_escape_more_than_invalid_ones() {
    let cfg = trap_config(
        vec![cell(0.75, 0.5, 0.0), cell(0.9, 0.6, 0.0), cell(2.0, 0.5, 1.0), cell(0.4, 0.2, 0.0)],
        40,
        100_000,
    );
    let cfg = ExperimentConfig {
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..cfg
    };
    let st = trap_study(&cfg).unwrap();
    for c in &st.cells {
        assert!((0.0..=1.0).contains(&c.escape_fraction));
    }
    let good = st.mean_escape(Regime::LocalMinimizer).unwrap();
    let bad = st.mean_escape(Regime::Invalid).unwrap();
    assert!(good > bad, "local-minimizer cells {good} vs invalid cells {bad}");
}

#[test]
fn invalid_cell_needs_override() {
    let cfg = ExperimentConfig {
        override_assumptions: false,
        ..trap_config(vec![cell(2.0, 0.5, 1.0)], 2, 100)
    };
    assert!(matches!(trap_study(&cfg), Err(HarnessError::Config(_))));
}

#[test]
fn frozen_control_has_flat_slope() {
    let cfg = ExperimentConfig {
        settings: vec![RateSetting::Control],
        dims: vec![3],
        n_grid: vec![100, 1_000, 10_000],
        seeds: 4,
        ..ExperimentConfig::default()
    };
    let st = rate_study(&cfg).unwrap();
    let slope = st.slope(RateSetting::Control, 3).unwrap();
    assert!(slope.abs() < 1e-12, "slope {slope}");
    let first = st.rows[0].metric_mean;
    assert!(st.rows.iter().all(|r| r.metric_mean == first));
}

// The standard error scales as 1/sqrt(M): doubling M halves its square.
#[test]
fn doubling_seeds_halves_the_variance_of_the_mean() {
    let base = ExperimentConfig {
        settings: vec![RateSetting::Iv],
        dims: vec![2],
        n_grid: vec![100],
        eps: 1e-2,
        workers: 4,
        ..ExperimentConfig::default()
    };
    let se = |m: usize| {
        let st = rate_study(&ExperimentConfig { seeds: m, ..base.clone() }).unwrap();
        st.rows[0].metric_se
    };
    let (small, large) = (se(1_000), se(2_000));
    let ratio = (large / small).powi(2);
    assert!((ratio - 0.5).abs() <= 0.2 * 0.5, "variance ratio {ratio}");
}

#[test]
fn zero_steps_mean_zero_deviation() {
    let obj = isotropic_quadratic(5).unwrap();
    let model = NoiseModel::isotropic(5);
    for b2 in [
        Beta2Schedule::ConstantOne,
        Beta2Schedule::Constant { beta2: 0.9 },
        Beta2Schedule::Vanishing { b: 0.5, beta: 0.7 },
    ] {
        let dev = historical_vs_rescaled(&obj, &model, &PowerSeq::constant(0.5), &b2, 1e-4, 0.1, &[1.0; 5], 0, 7).unwrap();
        assert_eq!(dev.theta, 0.0);
        assert_eq!(dev.w, 0.0);
    }
}

#[test]
fn config_hash_is_reported() {
    let cfg = ExperimentConfig {
        n_steps: 200,
        seeds: 2,
        ..ExperimentConfig::default()
    };
    let (csv, json) = outputs(Experiment::Run, &cfg);
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.contains(&format!("config_hash={}", cfg.hash())));
    let json: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(json["config_hash"], cfg.hash());
}
