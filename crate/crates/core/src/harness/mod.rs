//! Experiment orchestration: configuration, drivers and output files.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use thiserror::Error;

pub use config::{CellSpec, ExperimentConfig, RateSetting};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("empty configuration")]
    EmptyConfig,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::EmptyConfig | HarnessError::Config(_) => 2,
            HarnessError::Experiment(_) | HarnessError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Run,
    RateStudy,
    TrapStudy,
    EquivCheck,
    Validate,
}

impl Experiment {
    pub fn file_stem(&self) -> &'static str {
        match self {
            Experiment::Run => "run",
            Experiment::RateStudy => "rate_study",
            Experiment::TrapStudy => "trap_study",
            Experiment::EquivCheck => "equiv_check",
            Experiment::Validate => "validate",
        }
    }
}

/// What an experiment produced: a human summary and the files written.
#[derive(Debug)]
pub struct Outcome {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// Runs `exp` and writes `<out>/<stem>.csv` and `<out>/<stem>.json`.
///
/// Checks that fail (an equivalence deviation above tolerance, diverged
/// runs) are reported as [`HarnessError::Experiment`] after the outputs are
/// written.
pub fn execute(exp: Experiment, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, HarnessError> {
    let stem = exp.file_stem();
    match exp {
        Experiment::Run => {
            let o = experiments::run_experiment(cfg)?;
            let files = output::write_outputs(out, stem, &experiments::run_table(&o), &o)?;
            let mut grads: Vec<f64> = o.summaries.iter().map(|s| s.final_grad_norm).collect();
            grads.sort_by(f64::total_cmp);
            let summary = format!(
                "run: {} seeds, median final |grad f| = {:.3e}, diverged = {}\n",
                o.summaries.len(),
                grads[grads.len() / 2],
                o.diverged()
            );
            if o.diverged() > 0 {
                return Err(HarnessError::Experiment(format!("{} runs diverged", o.diverged())));
            }
            Ok(Outcome { summary, files })
        }
        Experiment::RateStudy => {
            let st = experiments::rate_study(cfg)?;
            let files = output::write_outputs(out, stem, &experiments::rate_table(&st), &st)?;
            let mut summary = String::new();
            for f in &st.fits {
                summary.push_str(&format!(
                    "setting {:<7} d = {:<4} slope = {}\n",
                    f.setting.label(),
                    f.d,
                    f.slope.map_or("n/a".to_string(), |s| format!("{s:.4}"))
                ));
            }
            Ok(Outcome { summary, files })
        }
        Experiment::TrapStudy => {
            let st = experiments::trap_study(cfg)?;
            let files = output::write_outputs(out, stem, &experiments::trap_table(&st), &st)?;
            let mut summary = String::new();
            for c in &st.cells {
                summary.push_str(&format!(
                    "({}, {}, {}) {:<16} escape {}/{} ({})\n",
                    c.beta, c.r, c.s, c.regime, c.escapes, c.runs, c.guarantee
                ));
            }
            Ok(Outcome { summary, files })
        }
        Experiment::EquivCheck => {
            let rep = experiments::equiv_check(cfg)?;
            let files = output::write_outputs(out, stem, &experiments::equiv_table(&rep), &rep)?;
            let mut summary = String::new();
            for r in &rep.rows {
                summary.push_str(&format!(
                    "{:?}: max deviation {:.3e} ({})\n",
                    r.variant,
                    r.max_theta_deviation,
                    if r.pass { "pass" } else { "FAIL" }
                ));
            }
            if !rep.all_pass() {
                return Err(HarnessError::Experiment(format!("deviation above tolerance\n{summary}")));
            }
            Ok(Outcome { summary, files })
        }
        Experiment::Validate => {
            let v = experiments::validate(cfg)?;
            let files = output::write_outputs(out, stem, &experiments::validate_table(&v), &v)?;
            Ok(Outcome {
                summary: experiments::validate_text(&v, cfg),
                files,
            })
        }
    }
}
