//! Fairness and accuracy metrics.
//!
//! Under the Gaussian model the output of a group-affine regressor in group
//! `s` is `N(<w_s, mu_s> + b_s, (sigma_x ||w_s||)^2)`, so the unfairness
//! scores have closed forms. Empirical counterparts are provided for the case
//! where only samples are available.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::ComponentEstimates;
use crate::gaussian::normal_cdf;
use crate::model::{self, GroupAffineRegressor, ModelParams, Regressor};
use crate::oracle::FairOracle;
use crate::rng;
use crate::vecops::{dot, norm, pairwise_sum, sub};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw1D {
    pub mean: f64,
    pub std: f64,
}

impl GaussianLaw1D {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(Error::Domain(format!("invalid Gaussian law N({mean}, {std}^2)")));
        }
        Ok(GaussianLaw1D { mean, std })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.std == 0.0 {
            if t >= self.mean {
                1.0
            } else {
                0.0
            }
        } else {
            normal_cdf((t - self.mean) / self.std)
        }
    }
}

/// 2-Wasserstein distance between two 1-D Gaussians.
pub fn w2_gaussian(a: GaussianLaw1D, b: GaussianLaw1D) -> f64 {
    (a.mean - b.mean).hypot(a.std - b.std)
}

/// 2-Wasserstein distance between two empirical measures on the line.
///
/// Both quantile functions are step functions; the distance is the exact L2
/// distance between them, integrated over the merged grid of breakpoints
/// `i/m1` and `j/m2`. Equal lengths reduce to matching sorted samples.
pub fn w2_empirical(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Empty);
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let terms: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
        return Ok((pairwise_sum(&terms) / a.len() as f64).sqrt());
    }
    // Walk the merged breakpoints in exact integer arithmetic: the k-th atom of
    // `a` covers (k/m1, (k+1)/m1], i.e. (k*m2, (k+1)*m2] on a common scale.
    let (m1, m2) = (a.len() as u128, b.len() as u128);
    let total = m1 * m2;
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0u128);
    let mut terms = Vec::with_capacity(a.len() + b.len());
    while pos < total {
        let next_a = (i as u128 + 1) * m2;
        let next_b = (j as u128 + 1) * m1;
        let next = next_a.min(next_b);
        let diff = a[i] - b[j];
        terms.push(diff * diff * (next - pos) as f64);
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok((pairwise_sum(&terms) / total as f64).sqrt())
}

/// The law of `f(X, S)` given `S = s`.
pub fn conditional_law(f: &GroupAffineRegressor, params: &ModelParams, s: usize) -> Result<GaussianLaw1D> {
    f.check_dims(params.d, params.m)?;
    if s >= params.m {
        return Err(Error::GroupOutOfRange { group: s, groups: params.m });
    }
    Ok(GaussianLaw1D {
        mean: dot(&f.w[s], &params.mu[s]) + f.b[s],
        std: params.sigma_x * norm(&f.w[s]),
    })
}

/// Kolmogorov distance `sup_t |F_a(t) - F_b(t)|` between two Gaussians.
///
/// The supremum of a CDF difference between two continuous laws sits where
/// the densities cross. Those points solve a quadratic in `t`; point masses
/// are handled through the CDF jump.
pub fn kolmogorov_gaussian(a: GaussianLaw1D, b: GaussianLaw1D) -> f64 {
    match (a.std == 0.0, b.std == 0.0) {
        (true, true) => {
            if a.mean == b.mean {
                0.0
            } else {
                1.0
            }
        }
        (true, false) => point_vs_gaussian(a.mean, b),
        (false, true) => point_vs_gaussian(b.mean, a),
        (false, false) => {
            let mut candidates = vec![0.5 * (a.mean + b.mean)];
            // log N(t; a) - log N(t; b) = 0  <=>  qa t^2 + qb t + qc = 0
            let (va, vb) = (a.std * a.std, b.std * b.std);
            let qa = 0.5 / vb - 0.5 / va;
            let qb = a.mean / va - b.mean / vb;
            let qc = 0.5 * b.mean * b.mean / vb - 0.5 * a.mean * a.mean / va + (b.std / a.std).ln();
            if qa == 0.0 {
                if qb != 0.0 {
                    candidates.push(-qc / qb);
                }
            } else {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let q = -0.5 * (qb + qb.signum_or_one() * disc.sqrt());
                    if q != 0.0 {
                        candidates.push(q / qa);
                        candidates.push(qc / q);
                    } else {
                        candidates.push(0.0);
                    }
                }
            }
            candidates
                .into_iter()
                .filter(|t| t.is_finite())
                .map(|t| (a.cdf(t) - b.cdf(t)).abs())
                .fold(0.0, f64::max)
        }
    }
}

trait SignumOrOne {
    fn signum_or_one(self) -> f64;
}

impl SignumOrOne for f64 {
    fn signum_or_one(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

fn point_vs_gaussian(point: f64, g: GaussianLaw1D) -> f64 {
    let below = g.cdf(point);
    below.max(1.0 - below)
}

/// W2 barycenter of 1-D Gaussians: weighted mean and weighted std.
pub fn gaussian_barycenter(laws: &[GaussianLaw1D], weights: &[f64]) -> GaussianLaw1D {
    let total: f64 = weights.iter().sum();
    GaussianLaw1D {
        mean: laws.iter().zip(weights).map(|(l, w)| w * l.mean).sum::<f64>() / total,
        std: laws.iter().zip(weights).map(|(l, w)| w * l.std).sum::<f64>() / total,
    }
}

/// `inf_nu sum_s p_s W2(nu_s, nu)` for Gaussian `nu_s`.
///
/// W2 between 1-D Gaussians is the Euclidean distance between their
/// `(mean, std)` points, and the infimum is attained inside their convex
/// hull, so it is the weighted geometric median of those points (Weiszfeld
/// iteration, checked against every data point).
pub fn average_w2(laws: &[GaussianLaw1D], weights: &[f64]) -> f64 {
    let objective = |m: f64, s: f64| -> f64 {
        laws.iter()
            .zip(weights)
            .map(|(l, w)| w * (l.mean - m).hypot(l.std - s))
            .sum()
    };
    let start = gaussian_barycenter(laws, weights);
    let (mut m, mut s) = (start.mean, start.std);
    for _ in 0..10_000 {
        let (mut num_m, mut num_s, mut den) = (0.0, 0.0, 0.0);
        let mut hit = false;
        for (l, w) in laws.iter().zip(weights) {
            let dist = (l.mean - m).hypot(l.std - s);
            if dist < 1e-300 {
                hit = true;
                break;
            }
            num_m += w * l.mean / dist;
            num_s += w * l.std / dist;
            den += w / dist;
        }
        if hit || den == 0.0 {
            break;
        }
        let (nm, ns) = (num_m / den, num_s / den);
        let step = (nm - m).hypot(ns - s);
        m = nm;
        s = ns;
        if step <= 1e-15 * (1.0 + m.abs() + s.abs()) {
            break;
        }
    }
    laws.iter()
        .map(|l| objective(l.mean, l.std))
        .fold(objective(m, s), f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfairnessReport {
    pub w2_max: f64,
    pub kol_max: f64,
    pub avg_w2: f64,
    pub pairwise: Vec<Vec<f64>>,
}

impl UnfairnessReport {
    pub const CSV_HEADER: [&'static str; 3] = ["w2_max", "kol_max", "avg_w2"];

    pub fn csv_row(&self) -> [String; 3] {
        [self.w2_max.to_string(), self.kol_max.to_string(), self.avg_w2.to_string()]
    }
}

pub fn unfairness(f: &GroupAffineRegressor, params: &ModelParams) -> Result<UnfairnessReport> {
    let laws = (0..params.m)
        .map(|s| conditional_law(f, params, s))
        .collect::<Result<Vec<_>>>()?;
    let m = laws.len();
    let mut pairwise = vec![vec![0.0; m]; m];
    let (mut w2_max, mut kol_max) = (0.0f64, 0.0f64);
    for i in 0..m {
        for j in (i + 1)..m {
            let w = w2_gaussian(laws[i], laws[j]);
            pairwise[i][j] = w;
            pairwise[j][i] = w;
            w2_max = w2_max.max(w);
            kol_max = kol_max.max(kolmogorov_gaussian(laws[i], laws[j]));
        }
    }
    Ok(UnfairnessReport {
        w2_max,
        kol_max,
        avg_w2: average_w2(&laws, &params.p),
        pairwise,
    })
}

/// Monte Carlo estimate (and standard error) of `E[(f - f_DP)^2]`.
///
/// Samples are generated in fixed-size chunks, each with its own seeded
/// stream, and reduced in chunk order, so the result does not depend on the
/// number of worker threads.
pub fn mc_excess_risk<R: Regressor + ?Sized>(
    f: &R,
    params: &ModelParams,
    oracle: &FairOracle,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_mc == 0 {
        return Err(Error::Precondition("n_mc must be positive".into()));
    }
    let fdp = &oracle.fdp;
    mc_mean(n_mc, seed, params, |x, s| {
        let diff = f.predict(x, s) - fdp.predict(x, s);
        diff * diff
    })
}

/// Mean and standard error of `g(X, S)` over `n` draws from the model.
pub fn mc_mean<G>(n: usize, seed: u64, params: &ModelParams, g: G) -> Result<(f64, f64)>
where
    G: Fn(&[f64], usize) -> f64 + Sync,
{
    const CHUNK: usize = 1 << 14;
    if n == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    let chunks = n.div_ceil(CHUNK);
    let cumulative = model::cumulative_weights(&params.p);
    let parts: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let mut r = rng::stream(seed, &[rng::purpose::MONTE_CARLO, c as u64]);
            let mut x = vec![0.0; params.d];
            let vals: Vec<f64> = (0..len)
                .map(|_| {
                    let s = model::draw_group(&cumulative, &mut r);
                    model::draw_features(params, s, &mut r, &mut x);
                    g(&x, s)
                })
                .collect();
            let mean = pairwise_sum(&vals) / len as f64;
            let dev: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
            (len as f64, mean, pairwise_sum(&dev))
        })
        .collect();
    // Chan et al. parallel combination, applied in chunk order.
    let (count, mean, m2) = parts
        .into_iter()
        .reduce(|(na, ma, sa), (nb, mb, sb)| {
            let n = na + nb;
            let delta = mb - ma;
            (n, ma + delta * nb / n, sa + sb + delta * delta * na * nb / n)
        })
        .expect("at least one chunk");
    let var = if count > 1.0 { m2 / (count - 1.0) } else { 0.0 };
    Ok((mean, (var / count).sqrt()))
}

/// One pair's sides of the inequality
/// `W2(nu_s, nu_s') <= 2B max(|<dir_s, mu_s - mu_hat_s>|, |<dir_s', mu_s' - mu_hat_s'>|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedMeanBound {
    pub s: usize,
    pub t: usize,
    pub w2: f64,
    pub bound: f64,
}

impl ProjectedMeanBound {
    pub fn holds(&self, tol: f64) -> bool {
        self.w2 <= self.bound + tol
    }
}

/// Evaluates both sides of the projected-mean fairness bound for every pair
/// of groups of a fitted model.
pub fn projected_mean_bounds(
    f: &GroupAffineRegressor,
    est: &ComponentEstimates,
    params: &ModelParams,
) -> Result<Vec<ProjectedMeanBound>> {
    let laws = (0..params.m)
        .map(|s| conditional_law(f, params, s))
        .collect::<Result<Vec<_>>>()?;
    let proj: Vec<f64> = (0..params.m)
        .map(|s| dot(&est.dir_hat[s], &sub(&params.mu[s], &est.mu_hat[s])).abs())
        .collect();
    let mut out = Vec::new();
    for s in 0..params.m {
        for t in (s + 1)..params.m {
            out.push(ProjectedMeanBound {
                s,
                t,
                w2: w2_gaussian(laws[s], laws[t]),
                bound: 2.0 * params.b_bound * proj[s].max(proj[t]),
            });
        }
    }
    Ok(out)
}
