//! Coordinate-wise vector algebra.
//!
//! Every operation acts independently on each coordinate of equal-length
//! vectors: `(u / v)_i = u_i / v_i`, `(u²)_i = u_i²`, `(√u)_i = √u_i` and
//! `(u + ε)_i = u_i + ε`. Lengths are never broadcast.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("division by zero at index {index}")]
    DivisionByZero { index: usize },
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
}

fn same_len(u: &[f64], v: &[f64]) -> Result<(), CoordError> {
    if u.len() != v.len() {
        return Err(CoordError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(())
}

/// Coordinate-wise quotient `u / v`.
pub fn cdiv(u: &[f64], v: &[f64]) -> Result<Vec<f64>, CoordError> {
    same_len(u, v)?;
    if let Some(index) = v.iter().position(|&x| x == 0.0) {
        return Err(CoordError::DivisionByZero { index });
    }
    Ok(u.iter().zip(v).map(|(a, b)| a / b).collect())
}

/// Coordinate-wise product `u · v`.
pub fn cmul(u: &[f64], v: &[f64]) -> Result<Vec<f64>, CoordError> {
    same_len(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| a * b).collect())
}

/// Coordinate-wise square.
pub fn csq(u: &[f64]) -> Vec<f64> {
    u.iter().map(|x| x * x).collect()
}

/// Coordinate-wise square root; every entry must be non-negative.
pub fn csqrt(u: &[f64]) -> Result<Vec<f64>, CoordError> {
    first_negative(u, 0.0)?;
    Ok(u.iter().map(|x| x.sqrt()).collect())
}

/// Adds the scalar `eps` to every coordinate.
pub fn cadd_scalar(u: &[f64], eps: f64) -> Vec<f64> {
    u.iter().map(|x| x + eps).collect()
}

/// `Σ_i (w_i + ε)`, i.e. the squared norm of `√(w + ε)`.
pub fn sum_plus_eps(w: &[f64], eps: f64) -> Result<f64, CoordError> {
    first_negative(w, eps)?;
    Ok(w.iter().map(|x| x + eps).sum())
}

/// `Σ_i √(w_i + ε)`, i.e. the squared norm of `(w + ε)^{1/4}`.
pub fn root_sum(w: &[f64], eps: f64) -> Result<f64, CoordError> {
    first_negative(w, eps)?;
    Ok(w.iter().map(|x| (x + eps).sqrt()).sum())
}

fn first_negative(u: &[f64], shift: f64) -> Result<(), CoordError> {
    match u.iter().position(|&x| x + shift < 0.0) {
        Some(index) => Err(CoordError::NegativeEntry {
            index,
            value: u[index] + shift,
        }),
        None => Ok(()),
    }
}

/// Euclidean norm.
pub fn norm(u: &[f64]) -> f64 {
    norm_sq(u).sqrt()
}

pub fn norm_sq(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum()
}

/// Euclidean distance between two equal-length vectors.
pub fn distance(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(u: &[f64]) -> bool {
    u.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdiv_examples() {
        assert_eq!(cdiv(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), vec![2.0, 2.0]);
        let u = [1.5, -2.0, 7.0];
        assert_eq!(cdiv(&u, &[1.0; 3]).unwrap(), u.to_vec());
        assert_eq!(cdiv(&[0.0, 0.0], &[3.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn cdiv_errors() {
        assert_eq!(
            cdiv(&[1.0], &[1.0, 2.0]),
            Err(CoordError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(
            cdiv(&[1.0, 2.0, 3.0], &[1.0, 0.0, 0.0]),
            Err(CoordError::DivisionByZero { index: 1 })
        );
    }

    #[test]
    fn csq_examples() {
        assert_eq!(csq(&[3.0, -2.0]), vec![9.0, 4.0]);
        assert_eq!(csq(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(csq(&[1.25, -3.5]), csq(&[-1.25, 3.5]));
    }

    #[test]
    fn csqrt_examples() {
        assert_eq!(csqrt(&[4.0, 9.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(csqrt(&[1.0; 4]).unwrap(), vec![1.0; 4]);
        let u = [-3.0, 0.5, 2.0];
        let back = csqrt(&csq(&u)).unwrap();
        for (b, x) in back.iter().zip(&u) {
            assert!((b - x.abs()).abs() <= 1e-15);
        }
        assert_eq!(
            csqrt(&[1.0, -0.5]),
            Err(CoordError::NegativeEntry { index: 1, value: -0.5 })
        );
    }

    #[test]
    fn cadd_scalar_examples() {
        assert_eq!(cadd_scalar(&[1.0, 2.0], 0.5), vec![1.5, 2.5]);
        assert_eq!(cadd_scalar(&[1.0, -2.0], 0.0), vec![1.0, -2.0]);
        assert_eq!(cadd_scalar(&[0.0; 3], 0.25), vec![0.25; 3]);
    }

    #[test]
    fn sum_plus_eps_examples() {
        assert_eq!(sum_plus_eps(&[0.0; 4], 0.5).unwrap(), 2.0);
        assert_eq!(sum_plus_eps(&[1.0, 3.0], 1.0).unwrap(), 6.0);
        assert!(sum_plus_eps(&[1.0, 2.0], 0.1).unwrap() <= sum_plus_eps(&[1.0, 2.5], 0.1).unwrap());
        assert!(matches!(
            sum_plus_eps(&[-2.0], 1.0),
            Err(CoordError::NegativeEntry { index: 0, .. })
        ));
    }

    #[test]
    fn root_sum_examples() {
        let d = 3.0;
        assert!((root_sum(&[0.0; 3], 0.04).unwrap() - d * 0.2).abs() < 1e-15);
        assert_eq!(root_sum(&[3.0, 8.0], 1.0).unwrap(), 5.0);
        let w = [0.3, 5.0, 2.0];
        let rs = root_sum(&w, 0.1).unwrap();
        assert!(rs * rs <= 3.0 * sum_plus_eps(&w, 0.1).unwrap());
    }
}
