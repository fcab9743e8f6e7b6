//! Stochastic gradient oracles `g = ∇f(θ) + σ ζ` with Gaussian `ζ`.

use crate::objectives::Objective;
use crate::schedules::ScheduleSet;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("covariance must be a non-empty square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("minimum eigenvalue {found} is below the ellipticity bound {required}")]
    NotElliptic { found: f64, required: f64 },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
}

/// Seeded, reproducible random stream (ChaCha8, one stream id per run).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// `ζ ~ N(0, I/d)`, so `E‖ζ‖² = 1`.
    Isotropic,
    /// `ζ = chol · z` with `z ~ N(0, I)`.
    Elliptic { cov: DMatrix<f64>, chol: DMatrix<f64> },
    /// Base noise scaled by `√(d + f(θ))`, so `E‖ζ‖² ≤ d + f(θ)`.
    StateScaled(Box<NoiseKind>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    dim: usize,
    ellipticity: f64,
}

impl NoiseModel {
    pub fn isotropic(dim: usize) -> Self {
        NoiseModel {
            kind: NoiseKind::Isotropic,
            dim,
            ellipticity: 1.0 / dim as f64,
        }
    }

    /// Elliptic noise with the covariance used as given; its smallest
    /// eigenvalue must be at least `m`.
    pub fn elliptic(cov: DMatrix<f64>, m: f64) -> Result<Self, NoiseError> {
        let (rows, cols) = cov.shape();
        if rows != cols || rows == 0 {
            return Err(NoiseError::NotSquare { rows, cols });
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(NoiseError::NotSymmetric);
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if !(min_eig >= m) || !(m > 0.0) {
            return Err(NoiseError::NotElliptic {
                found: min_eig,
                required: m,
            });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(NoiseError::NotPositiveDefinite)?
            .l();
        Ok(NoiseModel {
            kind: NoiseKind::Elliptic { cov, chol },
            dim: rows,
            ellipticity: min_eig,
        })
    }

    /// Elliptic noise with the covariance divided by its trace so that
    /// `E‖ζ‖² = 1`; `m` bounds the smallest eigenvalue after normalization.
    pub fn elliptic_normalized(cov: DMatrix<f64>, m: f64) -> Result<Self, NoiseError> {
        let (rows, cols) = cov.shape();
        if rows != cols || rows == 0 {
            return Err(NoiseError::NotSquare { rows, cols });
        }
        let tr = cov.trace();
        if !(tr > 0.0) {
            return Err(NoiseError::NotPositiveDefinite);
        }
        Self::elliptic(cov / tr, m)
    }

    pub fn state_scaled(base: NoiseModel) -> Self {
        NoiseModel {
            kind: NoiseKind::StateScaled(Box::new(base.kind)),
            dim: base.dim,
            ellipticity: base.ellipticity,
        }
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest eigenvalue of the (unscaled) covariance of `ζ`.
    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }

    pub fn label(&self) -> String {
        fn go(k: &NoiseKind) -> String {
            match k {
                NoiseKind::Isotropic => "isotropic".into(),
                NoiseKind::Elliptic { .. } => "elliptic".into(),
                NoiseKind::StateScaled(b) => format!("state_scaled({})", go(b)),
            }
        }
        go(&self.kind)
    }

    /// Covariance of `ζ` given `f(θ)`.
    pub fn covariance(&self, f_value: f64) -> DMatrix<f64> {
        fn go(k: &NoiseKind, d: usize, f: f64) -> DMatrix<f64> {
            match k {
                NoiseKind::Isotropic => DMatrix::identity(d, d) / d as f64,
                NoiseKind::Elliptic { cov, .. } => cov.clone(),
                NoiseKind::StateScaled(b) => go(b, d, f) * (d as f64 + f),
            }
        }
        go(&self.kind, self.dim, f_value)
    }

    pub fn needs_value(&self) -> bool {
        matches!(self.kind, NoiseKind::StateScaled(_))
    }

    /// Draws `ζ` into `out`; `f_value` is only read by state-scaled models.
    pub fn sample_into(&self, f_value: f64, rng: &mut RngStream, out: &mut [f64]) {
        fn go(k: &NoiseKind, d: usize, f: f64, rng: &mut RngStream, out: &mut [f64]) {
            match k {
                NoiseKind::Isotropic => {
                    let scale = (d as f64).sqrt().recip();
                    for o in out.iter_mut() {
                        *o = scale * rng.normal();
                    }
                }
                NoiseKind::Elliptic { chol, .. } => {
                    let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = (0..=i).map(|j| chol[(i, j)] * z[j]).sum();
                    }
                }
                NoiseKind::StateScaled(b) => {
                    go(b, d, f, rng, out);
                    let scale = (d as f64 + f).sqrt();
                    for o in out.iter_mut() {
                        *o *= scale;
                    }
                }
            }
        }
        go(&self.kind, self.dim, f_value, rng, out)
    }
}

/// How a shrinking noise scale `σ_n = σ₁ n^{-s}` is realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinibatchMode {
    /// Scale a single draw by `σ_{n+1}`.
    #[default]
    Analytic,
    /// Average `ceil((n+1)^{2s})` draws at scale `σ₁`.
    Literal,
}

/// Mini-batch size `ceil(n^{2s})`.
pub fn batch_size(n: u64, s: f64) -> usize {
    let raw = (n as f64).powf(2.0 * s);
    // absorb rounding in exact powers such as 16^0.5
    (raw - 1e-9 * raw.max(1.0)).ceil().max(1.0) as usize
}

/// Writes `∇f(θ) + sigma·ζ` into `out`.
pub fn noisy_gradient_into(
    obj: &dyn Objective,
    theta: &[f64],
    sigma: f64,
    model: &NoiseModel,
    rng: &mut RngStream,
    out: &mut [f64],
) {
    obj.grad_into(theta, out);
    if sigma == 0.0 {
        return;
    }
    let f = if model.needs_value() { obj.value(theta) } else { 0.0 };
    let mut z = vec![0.0; out.len()];
    model.sample_into(f, rng, &mut z);
    for (o, zi) in out.iter_mut().zip(&z) {
        *o += sigma * zi;
    }
}

/// Average of `batch` independent draws of `∇f(θ) + sigma_base·ζ`.
pub fn minibatch_gradient_into(
    obj: &dyn Objective,
    theta: &[f64],
    sigma_base: f64,
    model: &NoiseModel,
    rng: &mut RngStream,
    batch: usize,
    out: &mut [f64],
) {
    assert!(batch >= 1, "batch size must be at least 1");
    obj.grad_into(theta, out);
    if sigma_base == 0.0 {
        return;
    }
    let f = if model.needs_value() { obj.value(theta) } else { 0.0 };
    let mut z = vec![0.0; out.len()];
    let mut acc = vec![0.0; out.len()];
    for _ in 0..batch {
        model.sample_into(f, rng, &mut z);
        for (a, zi) in acc.iter_mut().zip(&z) {
            *a += zi;
        }
    }
    let scale = sigma_base / batch as f64;
    for (o, a) in out.iter_mut().zip(&acc) {
        *o += scale * a;
    }
}

/// Gradient sample used by the update from index `n`: noise scale `σ_{n+1}`.
pub fn sample_gradient(
    obj: &dyn Objective,
    theta: &[f64],
    n: u64,
    set: &ScheduleSet,
    model: &NoiseModel,
    rng: &mut RngStream,
) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    noisy_gradient_into(obj, theta, set.sigma.value(n + 1), model, rng, &mut g);
    g
}

/// Literal mini-batch: average of `batch` draws at the base scale `σ₁`.
pub fn minibatch_gradient(
    obj: &dyn Objective,
    theta: &[f64],
    set: &ScheduleSet,
    model: &NoiseModel,
    rng: &mut RngStream,
    batch: usize,
) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    minibatch_gradient_into(obj, theta, set.sigma.coef, model, rng, batch, &mut g);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{isotropic_quadratic, quadratic_objective};

    fn set(sigma1: f64) -> ScheduleSet {
        ScheduleSet::power_law(0.75, 0.5, 0.0, 0.5, 1.0, 1.0, sigma1, 1e-4).unwrap()
    }

    #[test]
    fn zero_sigma_is_exact_gradient() {
        let q = quadratic_objective(vec![1.0, 2.0], vec![1.0, 3.0]).unwrap();
        let mut rng = RngStream::new(1);
        let g = sample_gradient(&q, &[0.5, 0.5], 3, &set(0.0), &NoiseModel::isotropic(2), &mut rng);
        assert_eq!(g, q.grad(&[0.5, 0.5]));
    }

    #[test]
    fn unbiased_within_four_se() {
        let q = quadratic_objective(vec![1.0, -1.0, 0.0], vec![1.0, 2.0, 0.5]).unwrap();
        let theta = [0.3, 0.2, -1.0];
        let truth = q.grad(&theta);
        let models = [
            NoiseModel::isotropic(3),
            NoiseModel::state_scaled(NoiseModel::isotropic(3)),
            NoiseModel::elliptic_normalized(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0, 0.5]), 0.1).unwrap(),
        ];
        let n_draws = 100_000;
        for (k, model) in models.iter().enumerate() {
            let mut rng = RngStream::new(100 + k as u64);
            let mut sum = [0.0; 3];
            let mut sum_sq = [0.0; 3];
            for _ in 0..n_draws {
                let g = sample_gradient(&q, &theta, 1, &set(1.0), model, &mut rng);
                for i in 0..3 {
                    sum[i] += g[i];
                    sum_sq[i] += g[i] * g[i];
                }
            }
            for i in 0..3 {
                let mean = sum[i] / n_draws as f64;
                let var = sum_sq[i] / n_draws as f64 - mean * mean;
                let se = (var / n_draws as f64).sqrt();
                assert!((mean - truth[i]).abs() <= 4.0 * se, "{} coord {i}", model.label());
            }
        }
    }

    #[test]
    fn raw_elliptic_axis_variance() {
        let m = 0.2;
        let cov = DMatrix::from_diagonal(&nalgebra::dvector![1.0, m]);
        let model = NoiseModel::elliptic(cov, m).unwrap();
        let n = 100_000;
        let mut rng = RngStream::new(9);
        let mut second = [0.0; 2];
        let mut z = [0.0; 2];
        for _ in 0..n {
            model.sample_into(0.0, &mut rng, &mut z);
            second[0] += z[0] * z[0];
            second[1] += z[1] * z[1];
        }
        let bound = m * (1.0 - 5.0 / (n as f64).sqrt());
        for s in second {
            assert!(s / n as f64 >= bound);
        }
    }

    #[test]
    fn elliptic_rejects_small_eigenvalue() {
        let cov = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 0.05]);
        assert!(matches!(
            NoiseModel::elliptic(cov.clone(), 0.1),
            Err(NoiseError::NotElliptic { .. })
        ));
        // 0.05 / 1.05 after normalization
        assert!(NoiseModel::elliptic_normalized(cov, 0.04).is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(NoiseModel::elliptic(asym, 0.1), Err(NoiseError::NotSymmetric));
    }

    #[test]
    fn batch_of_one_matches_single_draw() {
        let q = isotropic_quadratic(3).unwrap();
        let theta = [0.1, 0.2, 0.3];
        let s = set(0.7);
        let model = NoiseModel::isotropic(3);
        let mut a = RngStream::new(4);
        let mut b = RngStream::new(4);
        for _ in 0..10 {
            let single = sample_gradient(&q, &theta, 0, &s, &model, &mut a);
            let batch = minibatch_gradient(&q, &theta, &s, &model, &mut b, 1);
            for (x, y) in single.iter().zip(&batch) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn batch_covariance_shrinks() {
        let q = isotropic_quadratic(2).unwrap();
        let theta = [0.0, 0.0];
        let s = set(1.0);
        let model = NoiseModel::isotropic(2);
        let n = 100_000;
        let var = |batch: usize, seed: u64| {
            let mut rng = RngStream::new(seed);
            let mut acc = 0.0;
            for _ in 0..n {
                let g = minibatch_gradient(&q, &theta, &s, &model, &mut rng, batch);
                acc += g[0] * g[0] + g[1] * g[1];
            }
            acc / n as f64
        };
        let ratio = var(4, 21) / var(1, 22);
        assert!((ratio - 0.25).abs() <= 0.025, "ratio {ratio}");
    }

    #[test]
    fn batch_schedule() {
        assert_eq!(batch_size(16, 0.25), 4);
        assert_eq!(batch_size(1, 0.25), 1);
        assert_eq!(batch_size(17, 0.25), 5);
        assert_eq!(batch_size(100, 0.0), 1);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngStream::new(77);
        let mut b = RngStream::new(77);
        let xs: Vec<f64> = (0..100).map(|_| a.normal()).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.normal()).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.position(), b.position());
        let mut c = RngStream::with_stream(77, 1);
        assert_ne!(xs[0], c.normal());
    }
}
