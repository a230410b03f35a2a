//! The plugin estimator of the fair regressor.
//!
//! Each group's sample is cut three ways (norm, direction, mean) and,
//! independently, two ways (intercept coefficients, intercept mean). The
//! component estimates are then substituted into the closed form of the fair
//! regressor.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GroupAffineRegressor};
use crate::rng;
use crate::vecops::{dot, norm};

/// Largest Gram-matrix condition number accepted by [`ols`].
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    /// Three-way partition used for the norm, direction and mean estimates.
    pub blocks: [Vec<usize>; 3],
    /// Independent two-way partition of the same indices.
    pub primed: [Vec<usize>; 2],
}

impl GroupSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.blocks[0].len(), self.blocks[1].len(), self.blocks[2].len()]
    }

    pub fn primed_sizes(&self) -> [usize; 2] {
        [self.primed[0].len(), self.primed[1].len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub groups: Vec<GroupSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimates {
    pub p_hat: Vec<f64>,
    pub norm_hat_s: Vec<f64>,
    pub norm_hat_bar: f64,
    pub dir_hat: Vec<Vec<f64>>,
    pub mu_hat: Vec<Vec<f64>>,
    pub beta_prime_hat: Vec<Vec<f64>>,
    pub mu_prime_hat: Vec<Vec<f64>>,
    pub gate_18d: Vec<bool>,
    pub gate_12d: Vec<bool>,
}

impl ComponentEstimates {
    /// `sum_s p_hat_s <beta'_s, mu'_s>`.
    pub fn intercept_term(&self) -> f64 {
        self.p_hat
            .iter()
            .zip(self.beta_prime_hat.iter().zip(&self.mu_prime_hat))
            .map(|(p, (b, m))| p * dot(b, m))
            .sum()
    }

    /// Evaluates the plugin formula directly, without the affine packing.
    pub fn plugin_value(&self, x: &[f64], s: usize) -> f64 {
        let centered: Vec<f64> = x.iter().zip(&self.mu_hat[s]).map(|(a, b)| a - b).collect();
        self.norm_hat_bar * dot(&self.dir_hat[s], &centered) + self.intercept_term()
    }

    /// Packs the plugin formula as `w_s = nbar * dir_s`,
    /// `b_s = -nbar <dir_s, mu_hat_s> + intercept`.
    pub fn to_regressor(&self) -> GroupAffineRegressor {
        let c = self.intercept_term();
        let w: Vec<Vec<f64>> = self
            .dir_hat
            .iter()
            .map(|v| v.iter().map(|x| self.norm_hat_bar * x).collect())
            .collect();
        let b = self
            .dir_hat
            .iter()
            .zip(&self.mu_hat)
            .map(|(v, m)| -self.norm_hat_bar * dot(v, m) + c)
            .collect();
        GroupAffineRegressor { w, b }
    }
}

fn cut<const K: usize>(indices: &[usize]) -> [Vec<usize>; K] {
    let n = indices.len();
    let (base, rem) = (n / K, n % K);
    let mut start = 0;
    std::array::from_fn(|b| {
        let len = base + usize::from(b < rem);
        let block = indices[start..start + len].to_vec();
        start += len;
        block
    })
}

/// Randomly permutes each group's indices and cuts them into contiguous
/// blocks whose sizes differ by at most one (the extra elements go to the
/// earliest blocks).
pub fn make_split(dataset: &Dataset, seed: u64) -> SplitPlan {
    let groups = (0..dataset.m)
        .map(|g| {
            let base = dataset.group_indices(g);
            let mut first = base.clone();
            first.shuffle(&mut rng::stream(seed, &[rng::purpose::SPLIT, g as u64, 0]));
            let mut second = base;
            second.shuffle(&mut rng::stream(seed, &[rng::purpose::SPLIT, g as u64, 1]));
            GroupSplit {
                blocks: cut::<3>(&first),
                primed: cut::<2>(&second),
            }
        })
        .collect();
    SplitPlan { groups }
}

/// Least squares via column-pivoted QR of the design. The Gram condition
/// number is estimated as the squared ratio of extreme `|R_ii|`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, d) = x.shape();
    if y.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: y.len() });
    }
    if m < d || d == 0 {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..d).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { (max / min).powi(2) } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let qty = qr.q().transpose() * y;
    let mut z = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::Singular { condition })?;
    qr.p().inv_permute_rows(&mut z);
    Ok(z)
}

fn design(dataset: &Dataset, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let d = dataset.d;
    let x = DMatrix::from_fn(idx.len(), d, |i, j| dataset.x[idx[i] * d + j]);
    let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| dataset.y[i]));
    (x, y)
}

fn mean_row(dataset: &Dataset, idx: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; dataset.d];
    if idx.is_empty() {
        return acc;
    }
    for &i in idx {
        for (a, v) in acc.iter_mut().zip(dataset.row(i)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= idx.len() as f64);
    acc
}

/// Computes every component estimate and the fitted regressor.
pub fn fit(
    dataset: &Dataset,
    d: usize,
    m: usize,
    seed: u64,
) -> Result<(GroupAffineRegressor, ComponentEstimates)> {
    let plan = make_split(dataset, seed);
    fit_with_plan(dataset, d, m, &plan)
}

pub fn fit_with_plan(
    dataset: &Dataset,
    d: usize,
    m: usize,
    plan: &SplitPlan,
) -> Result<(GroupAffineRegressor, ComponentEstimates)> {
    if dataset.d != d {
        return Err(Error::DimensionMismatch { expected: d, got: dataset.d });
    }
    if dataset.m != m || plan.groups.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: dataset.m });
    }
    let n = dataset.n().max(1) as f64;
    let zero = vec![0.0; d];
    let mut est = ComponentEstimates {
        p_hat: dataset.group_counts.iter().map(|&c| c as f64 / n).collect(),
        norm_hat_s: vec![0.0; m],
        norm_hat_bar: 0.0,
        dir_hat: vec![zero.clone(); m],
        mu_hat: vec![zero.clone(); m],
        beta_prime_hat: vec![zero.clone(); m],
        mu_prime_hat: vec![zero; m],
        gate_18d: dataset.group_counts.iter().map(|&c| c > 18 * d).collect(),
        gate_12d: dataset.group_counts.iter().map(|&c| c > 12 * d).collect(),
    };
    for (s, split) in plan.groups.iter().enumerate() {
        if est.gate_18d[s] {
            let (x, y) = design(dataset, &split.blocks[0]);
            est.norm_hat_s[s] = ols(&x, &y)?.norm();
            let (x, y) = design(dataset, &split.blocks[1]);
            let b = ols(&x, &y)?;
            let len = b.norm();
            if len > 0.0 {
                est.dir_hat[s] = b.iter().map(|v| v / len).collect();
            }
        }
        est.mu_hat[s] = mean_row(dataset, &split.blocks[2]);
        if est.gate_12d[s] {
            let (x, y) = design(dataset, &split.primed[0]);
            est.beta_prime_hat[s] = ols(&x, &y)?.iter().copied().collect();
            est.mu_prime_hat[s] = mean_row(dataset, &split.primed[1]);
        }
    }
    est.norm_hat_bar = est.p_hat.iter().zip(&est.norm_hat_s).map(|(p, v)| p * v).sum();
    debug_assert!(est.dir_hat.iter().all(|v| {
        let n = norm(v);
        n == 0.0 || (n - 1.0).abs() < 1e-12
    }));
    Ok((est.to_regressor(), est))
}
