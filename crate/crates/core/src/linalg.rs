//! Eigenvalue diagnostics for empirical second-moment matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use rand_distr::{Distribution, StandardNormal};

/// `21 e^10`, the constant of the minimum-eigenvalue tail bound.
pub fn tail_constant() -> f64 {
    21.0 * 10f64.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigDiag {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n: usize,
    pub d: usize,
}

/// Extreme eigenvalues of `(1/m) X^T X`. Closed forms for `d <= 2`.
pub fn gram_eigs(x: &DMatrix<f64>) -> Result<EigDiag> {
    let (m, d) = x.shape();
    if m == 0 || d == 0 {
        return Err(Error::Empty);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let gram = (x.transpose() * x) / m as f64;
    let (lambda_min, lambda_max) = match d {
        1 => (gram[(0, 0)], gram[(0, 0)]),
        2 => {
            let (a, b, c) = (gram[(0, 0)], gram[(0, 1)], gram[(1, 1)]);
            let mean = 0.5 * (a + c);
            let r = (0.5 * (a - c)).hypot(b);
            // Stable small root: det / large root.
            let hi = mean + r;
            let det = a * c - b * b;
            let lo = if hi > 0.0 { det / hi } else { mean - r };
            (lo.min(hi), hi)
        }
        _ => {
            let eig = SymmetricEigen::new(gram);
            let ev = eig.eigenvalues;
            (ev.min(), ev.max())
        }
    };
    Ok(EigDiag {
        lambda_min,
        lambda_max,
        n: m,
        d,
    })
}

fn gaussian_design(mu: &[f64], sigma_x: f64, n: usize, seed: u64, rep: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, &[rng::purpose::DIAGNOSTIC, rep]);
    let d = mu.len();
    DMatrix::from_fn(n, d, |_, j| {
        let z: f64 = StandardNormal.sample(&mut r);
        mu[j] + sigma_x * z
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub empirical_tail: f64,
    pub bound: f64,
    pub vacuous: bool,
}

impl TailRow {
    /// The bound is only checked where it is below one.
    pub fn holds(&self) -> bool {
        self.vacuous || self.empirical_tail <= self.bound
    }
}

/// Simulates `P(lambda_min((1/n) X^T X) < t)` for rows `X_i ~ N(mu, sigma_x^2 I)`
/// and reports it next to `(21 e^10 t / sigma_x^2)^(n/6)`.
pub fn min_eig_tail_check(
    mu: &[f64],
    sigma_x: f64,
    n: usize,
    t_grid: &[f64],
    reps: usize,
    seed: u64,
) -> Result<Vec<TailRow>> {
    let d = mu.len();
    if n <= 6 * d {
        return Err(Error::Precondition(format!("need n > 6d (n = {n}, d = {d})")));
    }
    let mins = (0..reps)
        .into_par_iter()
        .map(|r| gram_eigs(&gaussian_design(mu, sigma_x, n, seed, r as u64)).map(|e| e.lambda_min))
        .collect::<Result<Vec<f64>>>()?;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let hits = mins.iter().filter(|&&l| l < t).count();
            let bound = (tail_constant() * t / (sigma_x * sigma_x)).powf(n as f64 / 6.0);
            TailRow {
                t,
                empirical_tail: hits as f64 / reps.max(1) as f64,
                bound,
                vacuous: !(bound < 1.0),
            }
        })
        .collect())
}

pub fn write_tail_csv<W: std::io::Write>(rows: &[TailRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "empirical_tail", "bound", "vacuous_flag"])?;
    for r in rows {
        wtr.write_record([
            r.t.to_string(),
            r.empirical_tail.to_string(),
            r.bound.to_string(),
            r.vacuous.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseEigCheck {
    pub mean: f64,
    pub bound: f64,
}

/// Monte Carlo mean of `lambda_max(((1/n) X^T X)^-1)` against
/// `21 e^10 / sigma_x^2 * (1 + 6/(n - 6))`.
pub fn max_inverse_eig_check(
    mu: &[f64],
    sigma_x: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<InverseEigCheck> {
    let d = mu.len();
    if n <= 6 * d {
        return Err(Error::Precondition(format!("need n > 6d (n = {n}, d = {d})")));
    }
    let vals = (0..reps)
        .into_par_iter()
        .map(|r| gram_eigs(&gaussian_design(mu, sigma_x, n, seed, r as u64)).map(|e| 1.0 / e.lambda_min))
        .collect::<Result<Vec<f64>>>()?;
    Ok(InverseEigCheck {
        mean: crate::vecops::pairwise_sum(&vals) / reps.max(1) as f64,
        bound: tail_constant() / (sigma_x * sigma_x) * (1.0 + 6.0 / (n as f64 - 6.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rows() {
        for d in 1..6 {
            let x = DMatrix::<f64>::identity(d, d);
            let e = gram_eigs(&x).unwrap();
            assert!((e.lambda_min - 1.0 / d as f64).abs() < 1e-14);
            assert!((e.lambda_max - 1.0 / d as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_deficient_has_zero_minimum() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.5, -1.0, 0.3, 0.0, 1.0, 2.0]);
        assert!(gram_eigs(&x).unwrap().lambda_min.abs() < 1e-10);
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let e = gram_eigs(&x).unwrap();
        assert!(e.lambda_min.abs() < 1e-12);
        assert!((e.lambda_max - 25.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_agrees_with_solver() {
        let x = gaussian_design(&[0.5, -1.0], 1.3, 40, 3, 0);
        let e = gram_eigs(&x).unwrap();
        let g = (x.transpose() * &x) / 40.0;
        let ev = SymmetricEigen::new(g).eigenvalues;
        assert!((e.lambda_min - ev.min()).abs() < 1e-12);
        assert!((e.lambda_max - ev.max()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let x = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(gram_eigs(&x), Err(Error::NonFinite)));
    }

    #[test]
    fn tail_check_precondition_and_flags() {
        assert!(min_eig_tail_check(&[0.0, 0.0], 1.0, 12, &[0.1], 10, 0).is_err());
        let rows = min_eig_tail_check(&[0.0, 0.0], 1.0, 60, &[1e-12, 0.5], 200, 0).unwrap();
        assert!(!rows[0].vacuous && rows[0].empirical_tail == 0.0 && rows[0].holds());
        assert!(rows[1].vacuous);
        let mut buf = Vec::new();
        write_tail_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,empirical_tail,bound,vacuous_flag\n"));
    }
}
