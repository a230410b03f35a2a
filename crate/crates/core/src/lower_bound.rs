//! Hard-instance machinery for the minimax lower bound.
//!
//! A packed family indexes parameter sets by sign matrices
//! `v in {-1, +1}^{M x (d-1)}`: every group coefficient has norm `B_s`, a
//! first coordinate `B_s sqrt(1 - eps_s^2)` and remaining coordinates
//! `B_s v_{s,i} eps_s / sqrt(d-1)`, with all means at zero. A randomized
//! greedy code search picks a well-separated subset, and the Fano bound is
//! assembled from the pairwise separation and KL divergences of that subset.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng;
use crate::vecops::{dist_sq, dot, norm, pairwise_sum};

/// A sign matrix stored as one bit mask per block (bit set = +1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignCode {
    pub blocks: Vec<u64>,
}

impl SignCode {
    pub fn from_signs(signs: &[Vec<i8>]) -> Result<Self> {
        let blocks = signs
            .iter()
            .map(|row| {
                if row.len() > 64 {
                    return Err(Error::Domain("block length above 64".into()));
                }
                row.iter().enumerate().try_fold(0u64, |acc, (i, &v)| match v {
                    1 => Ok(acc | (1 << i)),
                    -1 => Ok(acc),
                    _ => Err(Error::Domain(format!("sign entries must be +-1, got {v}"))),
                })
            })
            .collect::<Result<Vec<u64>>>()?;
        Ok(SignCode { blocks })
    }

    pub fn sign(&self, block: usize, i: usize) -> f64 {
        if self.blocks[block] >> i & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn block_distance(&self, other: &SignCode, block: usize) -> u32 {
        (self.blocks[block] ^ other.blocks[block]).count_ones()
    }

    pub fn block_distances(&self, other: &SignCode) -> Vec<u32> {
        (0..self.blocks.len()).map(|s| self.block_distance(other, s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedFamily {
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub b_s: Vec<f64>,
    pub eps_s: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma_x: f64,
    pub sigma_xi: f64,
    /// The selected subset of sign matrices; empty until a code is attached.
    pub code: Vec<SignCode>,
}

/// Builds the family with balanced weights and unit noise scales; see
/// [`PackedFamily::with_weights`] and [`PackedFamily::with_sigmas`].
pub fn build_family(d: usize, m: usize, b_s: &[f64], eps_s: &[f64]) -> Result<PackedFamily> {
    if d < 2 {
        return Err(Error::Domain("packed family needs d >= 2".into()));
    }
    if d - 1 > 64 {
        return Err(Error::Domain("packed family supports d <= 65".into()));
    }
    if m == 0 || b_s.len() != m || eps_s.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b_s.len().min(eps_s.len()) });
    }
    if let Some(e) = eps_s.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::Domain(format!("eps_s must lie in (0, 1], got {e}")));
    }
    if let Some(b) = b_s.iter().find(|&&b| !(b > 0.0)) {
        return Err(Error::Domain(format!("B_s must be positive, got {b}")));
    }
    Ok(PackedFamily {
        d,
        m,
        b_s: b_s.to_vec(),
        eps_s: eps_s.to_vec(),
        p: vec![1.0 / m as f64; m],
        sigma_x: 1.0,
        sigma_xi: 1.0,
        code: Vec::new(),
    })
}

impl PackedFamily {
    pub fn with_weights(mut self, p: Vec<f64>) -> Result<Self> {
        if p.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: p.len() });
        }
        self.p = p;
        Ok(self)
    }

    pub fn with_sigmas(mut self, sigma_x: f64, sigma_xi: f64) -> Self {
        self.sigma_x = sigma_x;
        self.sigma_xi = sigma_xi;
        self
    }

    pub fn with_code(mut self, code: &CodeSet) -> Result<Self> {
        if code.blocks != self.m || code.block_length != self.d - 1 {
            return Err(Error::DimensionMismatch { expected: self.m, got: code.blocks });
        }
        self.code = code.codewords.clone();
        Ok(self)
    }

    pub fn block_length(&self) -> usize {
        self.d - 1
    }

    /// Every sign matrix of the family, generated on demand.
    pub fn full_code(&self) -> impl Iterator<Item = SignCode> + '_ {
        let bits = self.m * self.block_length();
        let total: u128 = 1u128 << bits.min(127);
        let len = self.block_length();
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        (0..total).map(move |idx| SignCode {
            blocks: (0..self.m)
                .map(|s| ((idx >> (s * len)) as u64) & mask)
                .collect(),
        })
    }

    /// `sum_s p_s B_s`; shared by every member of the family.
    pub fn mean_norm(&self) -> f64 {
        self.p.iter().zip(&self.b_s).map(|(p, b)| p * b).sum()
    }

    /// The coefficient vectors for sign matrix `v`.
    pub fn beta_of(&self, v: &SignCode) -> Vec<Vec<f64>> {
        let k = self.block_length() as f64;
        (0..self.m)
            .map(|s| {
                let (b, e) = (self.b_s[s], self.eps_s[s]);
                let mut row = Vec::with_capacity(self.d);
                row.push(b * (1.0 - e * e).sqrt());
                for i in 0..self.block_length() {
                    row.push(b * v.sign(s, i) * e / k.sqrt());
                }
                row
            })
            .collect()
    }

    /// The parameter set for `v` (all means zero). `B` is set to the smallest
    /// value admitted by the constraint set.
    pub fn params_of(&self, v: &SignCode) -> ModelParams {
        let beta = self.beta_of(v);
        let max_b = self.b_s.iter().cloned().fold(0.0, f64::max);
        let inv: f64 = self.b_s.iter().map(|b| b.powi(-2)).sum::<f64>() / self.m as f64;
        let diversity = self.mean_norm().powi(2) * inv;
        ModelParams {
            d: self.d,
            m: self.m,
            beta,
            mu: vec![vec![0.0; self.d]; self.m],
            p: self.p.clone(),
            sigma_x: self.sigma_x,
            sigma_xi: self.sigma_xi,
            b_bound: max_b.max(diversity.sqrt()),
            u_bound: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSet {
    pub block_length: usize,
    pub blocks: usize,
    pub codewords: Vec<SignCode>,
    /// Minimum over codeword pairs and blocks of the Hamming distance;
    /// `None` when fewer than two codewords exist.
    pub min_block_distance: Option<u32>,
}

impl CodeSet {
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// The size `2^{M(d-1)/8}` claimed by the existence argument, for reporting.
    pub fn reference_size(&self) -> f64 {
        2f64.powf((self.blocks * self.block_length) as f64 / 8.0)
    }
}

fn min_block_distance(words: &[SignCode]) -> Option<u32> {
    let mut best: Option<u32> = None;
    for i in 0..words.len() {
        for j in (i + 1)..words.len() {
            let d = words[i].block_distances(&words[j]).into_iter().min().unwrap_or(0);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

/// Randomized greedy code search: draw uniform sign matrices and keep those
/// at Hamming distance at least `min_dist` from every kept codeword in every
/// block. Duplicates are never kept.
pub fn gv_code(block_length: usize, blocks: usize, min_dist: u32, budget: usize, seed: u64) -> Result<CodeSet> {
    if block_length == 0 || block_length > 64 {
        return Err(Error::Domain(format!("block length must be in 1..=64, got {block_length}")));
    }
    let mask = if block_length == 64 { u64::MAX } else { (1u64 << block_length) - 1 };
    let mut r = rng::stream(seed, &[rng::purpose::CODE_SEARCH]);
    let mut words: Vec<SignCode> = Vec::new();
    for _ in 0..budget {
        let cand = SignCode {
            blocks: (0..blocks).map(|_| r.random::<u64>() & mask).collect(),
        };
        let ok = words.iter().all(|w| {
            w != &cand && (0..blocks).all(|s| w.block_distance(&cand, s) >= min_dist)
        });
        if ok {
            words.push(cand);
        }
    }
    Ok(CodeSet {
        block_length,
        blocks,
        min_block_distance: min_block_distance(&words),
        codewords: words,
    })
}

fn check_compatible(a: &ModelParams, b: &ModelParams) -> Result<()> {
    a.check_shapes()?;
    b.check_shapes()?;
    if a.d != b.d {
        return Err(Error::DimensionMismatch { expected: a.d, got: b.d });
    }
    if a.m != b.m {
        return Err(Error::DimensionMismatch { expected: a.m, got: b.m });
    }
    if a.p != b.p || a.sigma_x != b.sigma_x || a.sigma_xi != b.sigma_xi {
        return Err(Error::InvalidParams("p, sigma_x and sigma_xi must be shared".into()));
    }
    Ok(())
}

/// KL divergence between the sample laws under `theta` and `theta_prime`,
/// conditioned on the group counts.
pub fn kl_conditional(theta: &ModelParams, theta_prime: &ModelParams, n_counts: &[usize]) -> Result<f64> {
    check_compatible(theta, theta_prime)?;
    if n_counts.len() != theta.m {
        return Err(Error::DimensionMismatch { expected: theta.m, got: n_counts.len() });
    }
    let (vx, vxi) = (theta.sigma_x.powi(2), theta.sigma_xi.powi(2));
    Ok((0..theta.m)
        .map(|s| {
            let db: Vec<f64> = theta.beta[s].iter().zip(&theta_prime.beta[s]).map(|(a, b)| a - b).collect();
            let per_sample = dist_sq(&theta.mu[s], &theta_prime.mu[s]) / (2.0 * vx)
                + vx / (2.0 * vxi) * dot(&db, &db)
                + dot(&theta.mu[s], &db).powi(2) / (2.0 * vxi);
            n_counts[s] as f64 * per_sample
        })
        .sum())
}

/// `sum_s 2 sigma_x^2 B_s^2 n_s eps_s^2 d_H(v_s, v'_s) / (sigma_xi^2 (d-1))`.
pub fn packed_kl(family: &PackedFamily, v: &SignCode, w: &SignCode, n_counts: &[usize]) -> f64 {
    let k = family.block_length() as f64;
    (0..family.m)
        .map(|s| {
            2.0 * family.sigma_x.powi(2) * family.b_s[s].powi(2) * n_counts[s] as f64 * family.eps_s[s].powi(2)
                * v.block_distance(w, s) as f64
                / (family.sigma_xi.powi(2) * k)
        })
        .sum()
}

/// Sample-based KL: mean log-likelihood ratio of draws from `theta`, per
/// group, scaled by the counts. Returns the estimate and its standard error.
pub fn kl_monte_carlo(
    theta: &ModelParams,
    theta_prime: &ModelParams,
    n_counts: &[usize],
    samples_per_group: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_compatible(theta, theta_prime)?;
    if samples_per_group < 2 {
        return Err(Error::Precondition("need at least two samples per group".into()));
    }
    let (vx, vxi) = (theta.sigma_x.powi(2), theta.sigma_xi.powi(2));
    let parts: Vec<(f64, f64)> = (0..theta.m)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(seed, &[rng::purpose::MONTE_CARLO, s as u64]);
            let mut x = vec![0.0; theta.d];
            let llr: Vec<f64> = (0..samples_per_group)
                .map(|_| {
                    for (j, xj) in x.iter_mut().enumerate() {
                        let z: f64 = StandardNormal.sample(&mut r);
                        *xj = theta.mu[s][j] + theta.sigma_x * z;
                    }
                    let e: f64 = StandardNormal.sample(&mut r);
                    let y = dot(&theta.beta[s], &x) + theta.sigma_xi * e;
                    let rx = (dist_sq(&x, &theta_prime.mu[s]) - dist_sq(&x, &theta.mu[s])) / (2.0 * vx);
                    let ry = ((y - dot(&theta_prime.beta[s], &x)).powi(2) - (y - dot(&theta.beta[s], &x)).powi(2))
                        / (2.0 * vxi);
                    rx + ry
                })
                .collect();
            let k = samples_per_group as f64;
            let mean = pairwise_sum(&llr) / k;
            let dev: Vec<f64> = llr.iter().map(|v| (v - mean).powi(2)).collect();
            let var = pairwise_sum(&dev) / (k - 1.0);
            let n = n_counts[s] as f64;
            (n * mean, n * n * var / k)
        })
        .collect();
    let est = parts.iter().map(|p| p.0).sum();
    let var: f64 = parts.iter().map(|p| p.1).sum();
    Ok((est, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointBound {
    /// Lower bound including the intercept-mismatch term.
    pub tight: f64,
    /// Slope-only lower bound.
    pub simplified: f64,
}

/// Lower bound on `inf_f max(E(f; theta), E(f; theta_prime))`.
///
/// With `Delta_s = mu_s - mu'_s`, `r_s = ||Delta_s||^2 / (4 sigma_x^2)` and
/// `d_s = ||Delta_s||^2 / (2 sigma_x^2) < 1`, group `s` contributes
/// `p_s e^{-d_s} / 4 * (sigma_x^2 ||a_s - a'_s||^2 (1 + r_s)^{-(1 + d/2)} +
/// c_s^2 (1 + r_s)^{-d/2})`, where `a_s = nbar beta_s/||beta_s||` and `c_s`
/// is the intercept mismatch at the midpoint of the two means.
pub fn two_point_bound(theta: &ModelParams, theta_prime: &ModelParams) -> Result<TwoPointBound> {
    check_compatible(theta, theta_prime)?;
    let (d, m) = (theta.d, theta.m);
    let vx = theta.sigma_x.powi(2);
    let mut ds = Vec::with_capacity(m);
    for s in 0..m {
        let v = dist_sq(&theta.mu[s], &theta_prime.mu[s]) / (2.0 * vx);
        if !(v < 1.0) {
            return Err(Error::Precondition(format!(
                "||mu_s - mu'_s||^2 / (2 sigma_x^2) = {v} >= 1 for group {s}"
            )));
        }
        ds.push(v);
    }
    let slopes = |p: &ModelParams| -> Result<Vec<Vec<f64>>> {
        let bar = p.mean_norm();
        p.beta
            .iter()
            .enumerate()
            .map(|(s, b)| {
                let n = norm(b);
                if n == 0.0 {
                    Err(Error::DegenerateDirection { group: s })
                } else {
                    Ok(b.iter().map(|v| bar * v / n).collect())
                }
            })
            .collect()
    };
    let (a, a2) = (slopes(theta)?, slopes(theta_prime)?);
    let shared: f64 = (0..m)
        .map(|s| {
            let mid: Vec<f64> = theta.mu[s].iter().zip(&theta_prime.mu[s]).map(|(x, y)| 0.5 * (x + y)).collect();
            let half: Vec<f64> = theta.mu[s].iter().zip(&theta_prime.mu[s]).map(|(x, y)| 0.5 * (x - y)).collect();
            let diff: Vec<f64> = theta.beta[s].iter().zip(&theta_prime.beta[s]).map(|(x, y)| x - y).collect();
            let sum: Vec<f64> = theta.beta[s].iter().zip(&theta_prime.beta[s]).map(|(x, y)| x + y).collect();
            theta.p[s] * (dot(&diff, &mid) + dot(&sum, &half))
        })
        .sum();
    let (mut tight, mut simplified) = (0.0, 0.0);
    for s in 0..m {
        let half: Vec<f64> = theta.mu[s].iter().zip(&theta_prime.mu[s]).map(|(x, y)| 0.5 * (x - y)).collect();
        let slope_gap = dist_sq(&a[s], &a2[s]);
        let slope_sum: Vec<f64> = a[s].iter().zip(&a2[s]).map(|(x, y)| x + y).collect();
        let c = -dot(&slope_sum, &half) + shared;
        let base = 1.0 + 0.5 * ds[s];
        let weight = theta.p[s] * (-ds[s]).exp() / 4.0;
        let slope_part = vx * slope_gap * base.powf(-(1.0 + d as f64 / 2.0));
        tight += weight * (slope_part + c * c * base.powf(-(d as f64) / 2.0));
        simplified += weight * slope_part;
    }
    Ok(TwoPointBound { tight, simplified })
}

/// `eps * (1 - (avg_kl + ln 2) / ln K)`, clipped at zero.
pub fn fano_value(epsilon: f64, k: usize, avg_kl: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::Precondition(format!("Fano bound needs K >= 2, got {k}")));
    }
    Ok((epsilon * (1.0 - (avg_kl + std::f64::consts::LN_2) / (k as f64).ln())).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsChoice {
    pub eps: Vec<f64>,
    pub clamped: Vec<bool>,
}

/// `eps_s^2 = ((d-1)/16 - 1/M) sigma_xi^2 / (2 sigma_x^2 B_s^2 n_s)`, clamped
/// into `(0, 1]`.
pub fn hard_instance_eps(
    d: usize,
    m: usize,
    sigma_xi: f64,
    sigma_x: f64,
    b_s: &[f64],
    n_counts: &[usize],
) -> Result<EpsChoice> {
    if d < 2 || m * (d - 1) <= 16 {
        return Err(Error::Precondition(format!("need M(d-1) > 16, got M = {m}, d = {d}")));
    }
    if b_s.len() != m || n_counts.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b_s.len().min(n_counts.len()) });
    }
    let lead = (d - 1) as f64 / 16.0 - 1.0 / m as f64;
    let mut eps = Vec::with_capacity(m);
    let mut clamped = Vec::with_capacity(m);
    for s in 0..m {
        let e2 = lead * sigma_xi.powi(2) / (2.0 * sigma_x.powi(2) * b_s[s].powi(2) * n_counts[s] as f64);
        let e = e2.sqrt();
        if e > 1.0 || !e.is_finite() {
            log::warn!("eps for group {s} is {e}; clamped to 1");
            eps.push(1.0);
            clamped.push(true);
        } else {
            eps.push(e);
            clamped.push(false);
        }
    }
    Ok(EpsChoice { eps, clamped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoAssembly {
    /// Minimum two-point separation over codeword pairs.
    pub epsilon: f64,
    pub k: usize,
    /// Maximum pairwise KL over codeword pairs.
    pub max_kl: f64,
    pub fano_value: f64,
}

/// Combines the separation and KL of every codeword pair of the family's
/// attached code into a Fano bound.
pub fn assemble_fano(family: &PackedFamily, n_counts: &[usize]) -> Result<FanoAssembly> {
    let k = family.code.len();
    if k < 2 {
        return Err(Error::Precondition(format!("code has {k} codewords; need at least 2")));
    }
    let params: Vec<ModelParams> = family.code.iter().map(|v| family.params_of(v)).collect();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect();
    let stats = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<(f64, f64)> {
            let sep = two_point_bound(&params[i], &params[j])?.tight;
            let kl = kl_conditional(&params[i], &params[j], n_counts)?
                .max(kl_conditional(&params[j], &params[i], n_counts)?);
            Ok((sep, kl))
        })
        .collect::<Result<Vec<_>>>()?;
    let epsilon = stats.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let max_kl = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    Ok(FanoAssembly {
        epsilon,
        k,
        max_kl,
        fano_value: fano_value(epsilon, k, max_kl)?,
    })
}
