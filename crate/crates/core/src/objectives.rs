//! Test functions with certified smoothness and growth constants.
//!
//! Each objective is positive and coercive, has a Lipschitz gradient with
//! constant `L`, and satisfies `‖∇f‖² ≤ c_f f`. [`check_hf`] verifies the
//! constants numerically by sampling.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("quadratic: center has length {center} but diag has length {diag}")]
    LengthMismatch { center: usize, diag: usize },
    #[error("quadratic: curvature at index {index} must be positive, got {value}")]
    NonPositiveCurvature { index: usize, value: f64 },
    #[error("objective dimension must be at least 1")]
    EmptyDimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Min,
    Saddle,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub theta: Vec<f64>,
    pub kind: CriticalKind,
}

/// Certified constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfConstants {
    /// Lipschitz constant of the gradient.
    pub lipschitz: f64,
    /// `c_f` in `‖∇f‖² ≤ c_f f`.
    pub growth: f64,
    /// Positive lower bound of `f`.
    pub f_min: f64,
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
    fn grad_into(&self, theta: &[f64], out: &mut [f64]);
    fn constants(&self) -> HfConstants;
    fn critical_points(&self) -> &[CriticalPoint];

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.grad_into(theta, &mut g);
        g
    }

    /// Analytic Hessian, when available.
    fn hessian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `f(θ) = 1 + ½ Σ a_i (θ_i − c_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    center: Vec<f64>,
    diag: Vec<f64>,
    critical: Vec<CriticalPoint>,
}

impl Quadratic {
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

pub fn quadratic_objective(center: Vec<f64>, diag: Vec<f64>) -> Result<Quadratic, ObjectiveError> {
    if center.is_empty() {
        return Err(ObjectiveError::EmptyDimension);
    }
    if center.len() != diag.len() {
        return Err(ObjectiveError::LengthMismatch {
            center: center.len(),
            diag: diag.len(),
        });
    }
    if let Some(index) = diag.iter().position(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(ObjectiveError::NonPositiveCurvature {
            index,
            value: diag[index],
        });
    }
    let critical = vec![CriticalPoint {
        theta: center.clone(),
        kind: CriticalKind::Min,
    }];
    Ok(Quadratic {
        center,
        diag,
        critical,
    })
}

/// Unit curvature quadratic centred at the origin.
pub fn isotropic_quadratic(dim: usize) -> Result<Quadratic, ObjectiveError> {
    quadratic_objective(vec![0.0; dim], vec![1.0; dim])
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let q: f64 = theta
            .iter()
            .zip(&self.center)
            .zip(&self.diag)
            .map(|((t, c), a)| a * (t - c) * (t - c))
            .sum();
        1.0 + 0.5 * q
    }

    fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        for (((o, t), c), a) in out.iter_mut().zip(theta).zip(&self.center).zip(&self.diag) {
            *o = a * (t - c);
        }
    }

    fn constants(&self) -> HfConstants {
        let a_max = self.diag.iter().cloned().fold(0.0, f64::max);
        HfConstants {
            lipschitz: a_max,
            growth: 2.0 * a_max,
            f_min: 1.0,
        }
    }

    fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical
    }

    fn hessian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diag)))
    }
}

/// `f(x, y) = 1 + x² + g(y)` with `g(y) = √(4 + y²) + 2 exp(−y²) − 2`.
///
/// Strict saddle at the origin (Hessian `diag(2, −3.5)`), minima at `(0, ±y*)`.
/// Growth in `y` is linear at infinity so `‖∇f‖² ≤ c_f f` holds globally.
#[derive(Debug, Clone, PartialEq)]
pub struct Saddle {
    y_star: f64,
    growth: f64,
    critical: Vec<CriticalPoint>,
}

/// Box half-width and resolution used to certify `c_f` for [`Saddle`].
pub const SADDLE_CERT_HALF_WIDTH: f64 = 200.0;
const SADDLE_CERT_GRID: usize = 801;
const SADDLE_CERT_MARGIN: f64 = 2.0;

fn saddle_g(y: f64) -> f64 {
    (4.0 + y * y).sqrt() + 2.0 * (-y * y).exp() - 2.0
}

fn saddle_dg(y: f64) -> f64 {
    y / (4.0 + y * y).sqrt() - 4.0 * y * (-y * y).exp()
}

fn saddle_d2g(y: f64) -> f64 {
    4.0 / (4.0 + y * y).powf(1.5) + (8.0 * y * y - 4.0) * (-y * y).exp()
}

impl Saddle {
    /// Positive minimizer of `g`.
    pub fn y_star(&self) -> f64 {
        self.y_star
    }

    pub fn saddle_point(&self) -> [f64; 2] {
        [0.0, 0.0]
    }
}

pub fn saddle_objective() -> Saddle {
    // g' < 0 on (0, y*) and > 0 beyond: bisect on [1, 2].
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    debug_assert!(saddle_dg(lo) < 0.0 && saddle_dg(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if saddle_dg(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let y_star = 0.5 * (lo + hi);

    let mut worst: f64 = 0.0;
    let step = 2.0 * SADDLE_CERT_HALF_WIDTH / (SADDLE_CERT_GRID - 1) as f64;
    let fine = 4.0 / (SADDLE_CERT_GRID - 1) as f64;
    for i in 0..SADDLE_CERT_GRID {
        for j in 0..SADDLE_CERT_GRID {
            for (h, w) in [(step, SADDLE_CERT_HALF_WIDTH), (fine, 2.0)] {
                let x = -w + i as f64 * h;
                let y = -w + j as f64 * h;
                let f = 1.0 + x * x + saddle_g(y);
                let gx = 2.0 * x;
                let gy = saddle_dg(y);
                worst = worst.max((gx * gx + gy * gy) / f);
            }
        }
    }

    let critical = vec![
        CriticalPoint {
            theta: vec![0.0, 0.0],
            kind: CriticalKind::Saddle,
        },
        CriticalPoint {
            theta: vec![0.0, y_star],
            kind: CriticalKind::Min,
        },
        CriticalPoint {
            theta: vec![0.0, -y_star],
            kind: CriticalKind::Min,
        },
    ];
    Saddle {
        y_star,
        growth: SADDLE_CERT_MARGIN * worst,
        critical,
    }
}

impl Objective for Saddle {
    fn name(&self) -> &str {
        "saddle"
    }

    fn dim(&self) -> usize {
        2
    }

    fn value(&self, theta: &[f64]) -> f64 {
        1.0 + theta[0] * theta[0] + saddle_g(theta[1])
    }

    fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * theta[0];
        out[1] = saddle_dg(theta[1]);
    }

    fn constants(&self) -> HfConstants {
        // sup |g''| = |g''(0)| = 3.5 dominates the x-curvature 2.
        HfConstants {
            lipschitz: 3.5,
            growth: self.growth,
            f_min: 1.0,
        }
    }

    fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical
    }

    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, saddle_d2g(theta[1])]))
    }
}

/// Axis-aligned sampling box `[lo, hi]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfReport {
    pub sample_box: SampleBox,
    pub n_samples: usize,
    pub max_lipschitz_ratio: f64,
    pub lipschitz_ok: bool,
    pub max_growth_ratio: f64,
    pub growth_ok: bool,
    pub min_value: f64,
    pub f_min_ok: bool,
    pub max_fd_rel_error: f64,
    pub gradient_ok: bool,
}

impl HfReport {
    pub fn all_pass(&self) -> bool {
        self.lipschitz_ok && self.growth_ok && self.f_min_ok && self.gradient_ok
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;

/// Central finite-difference gradient with step `h`.
pub fn fd_gradient(obj: &dyn Objective, theta: &[f64], h: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = obj.value(&x);
            x[i] = orig - h;
            let down = obj.value(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative gradient error `max_i |a_i − b_i| / max(1, ‖a‖_∞)`.
pub fn gradient_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Samples the box and compares the observed ratios to the certified constants.
pub fn check_hf(obj: &dyn Objective, sample_box: SampleBox, n_samples: usize, seed: u64) -> HfReport {
    assert!(n_samples >= 2, "check_hf needs at least two samples");
    let consts = obj.constants();
    let d = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| rng.random_range(sample_box.lo..=sample_box.hi)).collect()
    };

    let mut max_lip: f64 = 0.0;
    let mut max_growth: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    let mut max_fd: f64 = 0.0;
    let mut prev = draw(&mut rng);
    let mut prev_grad = obj.grad(&prev);
    for _ in 1..n_samples {
        let x = draw(&mut rng);
        let gx = obj.grad(&x);
        let fx = obj.value(&x);
        let dist = crate::coordwise::distance(&x, &prev);
        if dist > 0.0 {
            max_lip = max_lip.max(crate::coordwise::distance(&gx, &prev_grad) / dist);
        }
        max_growth = max_growth.max(crate::coordwise::norm_sq(&gx) / fx);
        min_value = min_value.min(fx);
        max_fd = max_fd.max(gradient_rel_error(&gx, &fd_gradient(obj, &x, FD_STEP)));
        prev = x;
        prev_grad = gx;
    }
    let f0 = obj.value(&prev);
    min_value = min_value.min(f0);

    HfReport {
        sample_box,
        n_samples,
        max_lipschitz_ratio: max_lip,
        lipschitz_ok: max_lip <= consts.lipschitz * (1.0 + 1e-12),
        max_growth_ratio: max_growth,
        growth_ok: max_growth <= consts.growth,
        min_value,
        f_min_ok: min_value >= consts.f_min,
        max_fd_rel_error: max_fd,
        gradient_ok: max_fd <= FD_TOLERANCE,
    }
}
