//! JSON experiment configuration.
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected so typos surface as configuration errors.

use super::HarnessError;
use crate::noise::{MinibatchMode, NoiseModel};
use crate::objectives::{quadratic_objective, saddle_objective, Objective};
use crate::optimizer::ConstantParams;
use crate::schedules::{Beta2Schedule, PowerSeq, ScheduleSet};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic,
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindSpec {
    Isotropic,
    Elliptic,
    StateScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beta2Variant {
    ConstantOne,
    Constant,
    Vanishing,
}

/// Constant-parameter finite-horizon settings for the rate study.
///
/// Each fixes `(γ, p = q, σ²)` as a function of `(d, N)`; `Control` freezes
/// the iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSetting {
    I,
    Ii,
    Iii,
    Iv,
    Control,
}

impl RateSetting {
    pub const ALL: [RateSetting; 4] = [RateSetting::I, RateSetting::Ii, RateSetting::Iii, RateSetting::Iv];

    pub fn label(&self) -> &'static str {
        match self {
            RateSetting::I => "i",
            RateSetting::Ii => "ii",
            RateSetting::Iii => "iii",
            RateSetting::Iv => "iv",
            RateSetting::Control => "control",
        }
    }

    pub fn params(&self, d: usize, n: u64, eps: f64) -> ConstantParams {
        let d = d as f64;
        let rn = (n as f64).sqrt();
        let (gamma, pq, sigma_sq) = match self {
            RateSetting::I => (1.0 / (d * rn), 1.0 / rn, 1.0),
            RateSetting::Ii => (1.0 / rn, 1.0, 1.0 / (d * rn)),
            RateSetting::Iii => (1.0 / (d * n as f64).sqrt(), 1.0 / (d * n as f64).sqrt(), 1.0),
            RateSetting::Iv => (1.0 / rn, 1.0 / rn, 1.0 / d),
            RateSetting::Control => (0.0, 1.0 / rn, 1.0),
        };
        ConstantParams {
            gamma,
            p: pq,
            q: pq,
            sigma_sq,
            eps,
        }
    }

    /// `c` in `γ = c/√N`; `None` for the frozen control.
    pub fn step_constant(&self, d: usize) -> Option<f64> {
        let d = d as f64;
        match self {
            RateSetting::I => Some(1.0 / d),
            RateSetting::Ii | RateSetting::Iv => Some(1.0),
            RateSetting::Iii => Some(1.0 / d.sqrt()),
            RateSetting::Control => None,
        }
    }

    /// Horizon for a `δ`-accurate rate, `N = (cδ)^{-2}`.
    pub fn required_horizon(&self, d: usize, delta: f64) -> Option<f64> {
        self.step_constant(d).map(|c| (c * delta).powi(-2))
    }

    /// Oracle cost `N / σ²` at the required horizon.
    pub fn cost(&self, d: usize, delta: f64) -> Option<f64> {
        let n = self.required_horizon(d, delta)?;
        let dd = d as f64;
        let sigma_sq = match self {
            RateSetting::I | RateSetting::Iii => 1.0,
            RateSetting::Ii => 1.0 / (dd * n.sqrt()),
            RateSetting::Iv => 1.0 / dd,
            RateSetting::Control => return None,
        };
        Some(n / sigma_sq)
    }

    pub fn cost_order(&self) -> &'static str {
        match self {
            RateSetting::I => "d^2 delta^-2",
            RateSetting::Ii => "d delta^-3",
            RateSetting::Iii | RateSetting::Iv => "d delta^-2",
            RateSetting::Control => "-",
        }
    }
}

/// One `(β, r, s)` cell of the trap-study grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub beta: f64,
    pub r: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveKind,
    pub dim: usize,
    /// Quadratic centre; zero when absent.
    pub center: Option<Vec<f64>>,
    /// Quadratic curvatures; ones when absent.
    pub curvature: Option<Vec<f64>>,
    /// Starting point; objective-dependent default when absent.
    pub theta0: Option<Vec<f64>>,

    pub beta: f64,
    pub r: f64,
    pub s: f64,
    pub gamma1: f64,
    pub p1: f64,
    pub q_inf: f64,
    pub sigma1: f64,
    pub eps: f64,

    pub beta2_variant: Beta2Variant,
    /// Coefficient `b` of the vanishing variant `1 − b n^{-β}`.
    pub beta2_b: f64,
    pub beta2_exponent: f64,
    pub beta2_constant: f64,
    /// Exponent of the historical step `α_n = gamma1 · n^{-alpha_exponent}`.
    pub alpha_exponent: f64,

    pub noise_kind: NoiseKindSpec,
    /// Ellipticity bound for elliptic noise; `1/d` when absent.
    pub ellipticity_m: Option<f64>,
    /// Covariance diagonal for elliptic noise, trace-normalised; identity
    /// when absent.
    pub noise_cov_diag: Option<Vec<f64>>,
    pub minibatch_mode: MinibatchMode,

    pub n_steps: u64,
    pub thinning: u64,
    pub seeds: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub override_assumptions: bool,
    pub out_dir: Option<String>,

    pub settings: Vec<RateSetting>,
    pub n_grid: Vec<u64>,
    pub dims: Vec<usize>,

    pub cells: Vec<CellSpec>,
    pub rho: f64,
    pub noiseless_control: bool,

    pub equiv_dims: usize,
    pub equiv_tolerance: f64,

    pub deltas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            objective: ObjectiveKind::Quadratic,
            dim: 2,
            center: None,
            curvature: None,
            theta0: None,
            beta: 0.75,
            r: 0.5,
            s: 0.0,
            gamma1: 0.5,
            p1: 1.0,
            q_inf: 1.0,
            sigma1: 0.1,
            eps: 1e-4,
            beta2_variant: Beta2Variant::Vanishing,
            beta2_b: 0.5,
            beta2_exponent: 0.7,
            beta2_constant: 0.9,
            alpha_exponent: 0.0,
            noise_kind: NoiseKindSpec::Isotropic,
            ellipticity_m: None,
            noise_cov_diag: None,
            minibatch_mode: MinibatchMode::Analytic,
            n_steps: 10_000,
            thinning: 100,
            seeds: 10,
            base_seed: 0,
            workers: 1,
            override_assumptions: false,
            out_dir: None,
            settings: vec![RateSetting::Ii],
            n_grid: vec![100, 1_000, 10_000],
            dims: vec![],
            cells: vec![CellSpec { beta: 0.75, r: 0.5, s: 0.0 }],
            rho: 1e-3,
            noiseless_control: true,
            equiv_dims: 5,
            equiv_tolerance: 1e-9,
            deltas: vec![0.1],
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        if text.trim().is_empty() {
            return Err(HarnessError::EmptyConfig);
        }
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.seeds == 0 {
            return Err(config_err("seeds must be at least 1"));
        }
        if self.dim == 0 {
            return Err(config_err("dim must be at least 1"));
        }
        if self.thinning == 0 {
            return Err(config_err("thinning must be at least 1"));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(config_err("n_grid must be non-empty, positive and strictly increasing"));
        }
        if self.dims.contains(&0) {
            return Err(config_err("dims must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(config_err("eps must be positive"));
        }
        if !(self.rho >= 0.0) {
            return Err(config_err("rho must be non-negative"));
        }
        if self.deltas.iter().any(|&x| !(x > 0.0)) {
            return Err(config_err("deltas must be positive"));
        }
        if self.objective == ObjectiveKind::Saddle && self.dim != 2 {
            return Err(config_err("the saddle objective is two-dimensional; set dim = 2"));
        }
        for (name, v) in [("center", &self.center), ("curvature", &self.curvature), ("theta0", &self.theta0)] {
            if let Some(v) = v {
                if v.len() != self.dim {
                    return Err(config_err(format!("{name} has length {}, expected dim = {}", v.len(), self.dim)));
                }
            }
        }
        self.schedule_for(self.beta, self.r, self.s)?;
        self.beta2_schedule()?;
        self.objective_for(self.dim)?;
        self.noise_for(self.dim)?;
        Ok(())
    }

    /// Hash of the configuration with the output location and worker count
    /// blanked, so it identifies what was computed rather than how.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.out_dir = None;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        hex::encode(&digest[..8])
    }

    pub fn schedule(&self) -> Result<ScheduleSet, HarnessError> {
        self.schedule_for(self.beta, self.r, self.s)
    }

    pub fn schedule_for(&self, beta: f64, r: f64, s: f64) -> Result<ScheduleSet, HarnessError> {
        ScheduleSet::power_law(beta, r, s, self.gamma1, self.p1, self.q_inf, self.sigma1, self.eps)
            .map_err(|e| config_err(e.to_string()))
    }

    pub fn beta2_schedule(&self) -> Result<Beta2Schedule, HarnessError> {
        let b2 = match self.beta2_variant {
            Beta2Variant::ConstantOne => Beta2Schedule::ConstantOne,
            Beta2Variant::Constant => Beta2Schedule::Constant { beta2: self.beta2_constant },
            Beta2Variant::Vanishing => Beta2Schedule::Vanishing {
                b: self.beta2_b,
                beta: self.beta2_exponent,
            },
        };
        b2.check().map_err(|e| config_err(e.to_string()))?;
        Ok(b2)
    }

    /// All three decay regimes built from this configuration's parameters.
    pub fn beta2_variants(&self) -> Vec<(Beta2Variant, Beta2Schedule)> {
        [Beta2Variant::ConstantOne, Beta2Variant::Constant, Beta2Variant::Vanishing]
            .into_iter()
            .filter_map(|v| {
                let mut c = self.clone();
                c.beta2_variant = v;
                c.beta2_schedule().ok().map(|b| (v, b))
            })
            .collect()
    }

    pub fn alpha(&self) -> PowerSeq {
        PowerSeq::new(self.gamma1, self.alpha_exponent)
    }

    pub fn objective_for(&self, dim: usize) -> Result<Box<dyn Objective>, HarnessError> {
        match self.objective {
            ObjectiveKind::Saddle => Ok(Box::new(saddle_objective())),
            ObjectiveKind::Quadratic => {
                let sized = |v: &Option<Vec<f64>>, fill: f64| match v {
                    Some(v) if v.len() == dim => v.clone(),
                    _ => vec![fill; dim],
                };
                let q = quadratic_objective(sized(&self.center, 0.0), sized(&self.curvature, 1.0))
                    .map_err(|e| config_err(e.to_string()))?;
                Ok(Box::new(q))
            }
        }
    }

    pub fn noise_for(&self, dim: usize) -> Result<NoiseModel, HarnessError> {
        let elliptic = || -> Result<NoiseModel, HarnessError> {
            let diag = match &self.noise_cov_diag {
                Some(v) if v.len() == dim => v.clone(),
                Some(v) => return Err(config_err(format!("noise_cov_diag has length {}, expected {dim}", v.len()))),
                None => vec![1.0; dim],
            };
            let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
            let m = self.ellipticity_m.unwrap_or(1.0 / dim as f64);
            NoiseModel::elliptic_normalized(cov, m).map_err(|e| config_err(e.to_string()))
        };
        match self.noise_kind {
            NoiseKindSpec::Isotropic => Ok(NoiseModel::isotropic(dim)),
            NoiseKindSpec::Elliptic => elliptic(),
            NoiseKindSpec::StateScaled => Ok(NoiseModel::state_scaled(NoiseModel::isotropic(dim))),
        }
    }

    /// Default start: unit distance from the quadratic's centre along the
    /// diagonal, or the saddle point itself.
    pub fn start_for(&self, dim: usize) -> Vec<f64> {
        if let Some(t) = &self.theta0 {
            if t.len() == dim {
                return t.clone();
            }
        }
        match self.objective {
            ObjectiveKind::Saddle => saddle_objective().saddle_point().to_vec(),
            ObjectiveKind::Quadratic => {
                let off = 1.0 / (dim as f64).sqrt();
                match &self.center {
                    Some(c) if c.len() == dim => c.iter().map(|x| x + off).collect(),
                    _ => vec![off; dim],
                }
            }
        }
    }

    pub fn rate_dims(&self) -> Vec<usize> {
        if self.dims.is_empty() {
            vec![self.dim]
        } else {
            self.dims.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.settings = vec![RateSetting::I, RateSetting::Control];
        cfg.cells.push(CellSpec { beta: 0.4, r: 0.2, s: 0.0 });
        cfg.theta0 = Some(vec![0.25, -1.0]);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"dim": 4, "beta2_variant": "constant", "noise_kind": "elliptic"}"#).unwrap();
        assert_eq!(cfg.dim, 4);
        assert_eq!(cfg.beta, 0.75);
        assert_eq!(cfg.noise_for(4).unwrap().ellipticity(), 0.25);
    }

    #[test]
    fn rejections() {
        assert!(matches!(ExperimentConfig::from_json("  "), Err(HarnessError::EmptyConfig)));
        for bad in [
            r#"{"seeds": 0}"#,
            r#"{"n_grid": [100, 100]}"#,
            r#"{"n_grid": [1000, 100]}"#,
            r#"{"eps": 0}"#,
            r#"{"unknown_key": 1}"#,
            r#"{"objective": "saddle", "dim": 3}"#,
            r#"{"beta2_variant": "constant", "beta2_constant": 1.5}"#,
            r#"{"gamma1": -1}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(HarnessError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.workers = 8;
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seeds += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn settings_match_their_definitions() {
        let (d, n) = (10, 10_000);
        let p = RateSetting::I.params(d, n, 1e-4);
        assert_eq!((p.gamma, p.p, p.q, p.sigma_sq), (1.0 / 1000.0, 0.01, 0.01, 1.0));
        let p = RateSetting::Ii.params(d, n, 1e-4);
        assert_eq!((p.gamma, p.p, p.q, p.sigma_sq), (0.01, 1.0, 1.0, 1.0 / 1000.0));
        let p = RateSetting::Iii.params(d, n, 1e-4);
        assert!((p.gamma - 1.0 / 100_000f64.sqrt()).abs() < 1e-18 && p.p == p.gamma && p.sigma_sq == 1.0);
        let p = RateSetting::Iv.params(d, n, 1e-4);
        assert_eq!((p.gamma, p.p, p.sigma_sq), (0.01, 0.01, 0.1));
    }

    #[test]
    fn cost_table() {
        let (d, delta) = (10, 0.1);
        assert!((RateSetting::I.required_horizon(d, delta).unwrap() - 1e4).abs() < 1e-6);
        // d² δ⁻² with d = 10, δ = 0.1
        assert!((RateSetting::I.cost(d, delta).unwrap() - 1e4).abs() < 1e-6);
        assert!((RateSetting::Ii.cost(d, delta).unwrap() - 1e4).abs() < 1e-6);
        assert!((RateSetting::Iii.cost(d, delta).unwrap() - 1e3).abs() < 1e-6);
        assert!((RateSetting::Iv.cost(d, delta).unwrap() - 1e3).abs() < 1e-6);
        assert_eq!(RateSetting::Control.cost(d, delta), None);
    }
}
