//! The Bayes-optimal regressor under demographic parity.
//!
//! For the Gaussian model the constrained optimum is affine per group:
//! `f(x, s) = nbar <beta_s/||beta_s||, x - mu_s> + sum_s' p_s' <beta_s', mu_s'>`
//! where `nbar = sum_s p_s ||beta_s||`. [`quantile_compose_fdp`] evaluates the
//! same function through the barycentric quantile composition
//! `(sum_s' p_s' F^-1_{s'}) o F_s`, which is used as an independent check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{normal_quantile_tails, TailProb};
use crate::model::{GroupAffineRegressor, ModelParams};
use crate::vecops::{dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairOracle {
    pub params: ModelParams,
    pub fdp: GroupAffineRegressor,
    pub bar_norm: f64,
    pub const_term: f64,
}

fn nonzero_norms(params: &ModelParams) -> Result<Vec<f64>> {
    params.check_shapes()?;
    let norms = params.beta_norms();
    if let Some(group) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateDirection { group });
    }
    Ok(norms)
}

/// Builds the closed-form fair regressor. A single group is accepted, in
/// which case the result coincides with the unconstrained regression function.
pub fn build_fdp(params: &ModelParams) -> Result<FairOracle> {
    let norms = nonzero_norms(params)?;
    let bar_norm = params.mean_norm();
    let const_term: f64 = (0..params.m)
        .map(|s| params.p[s] * dot(&params.beta[s], &params.mu[s]))
        .sum();
    let w: Vec<Vec<f64>> = params
        .beta
        .iter()
        .zip(&norms)
        .map(|(b, n)| b.iter().map(|v| bar_norm * v / n).collect())
        .collect();
    let b = w
        .iter()
        .zip(&params.mu)
        .map(|(w, mu)| const_term - dot(w, mu))
        .collect();
    Ok(FairOracle {
        params: params.clone(),
        fdp: GroupAffineRegressor { w, b },
        bar_norm,
        const_term,
    })
}

impl FairOracle {
    /// `E[(f*(X,S) - f_DP(X,S))^2]`, the accuracy lost to the constraint.
    pub fn unfair_gap(&self) -> f64 {
        let p = &self.params;
        (0..p.m)
            .map(|s| {
                let slope = norm(&p.beta[s]) - self.bar_norm;
                let center = dot(&p.beta[s], &p.mu[s]) - self.const_term;
                p.p[s] * (p.sigma_x * p.sigma_x * slope * slope + center * center)
            })
            .sum()
    }
}

/// Evaluates the fair regressor at `(x, s)` by mapping `f*(x, s)` through the
/// group-`s` CDF and then through the `p`-weighted average of the group
/// quantile functions.
pub fn quantile_compose_fdp(params: &ModelParams, x: &[f64], s: usize) -> Result<f64> {
    let norms = nonzero_norms(params)?;
    if s >= params.m {
        return Err(Error::GroupOutOfRange {
            group: s,
            groups: params.m,
        });
    }
    if x.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: x.len(),
        });
    }
    let t = dot(&params.beta[s], x);
    let z = (t - dot(&params.beta[s], &params.mu[s])) / (params.sigma_x * norms[s]);
    let u = TailProb::at(z);
    let q = normal_quantile_tails(u);
    Ok((0..params.m)
        .map(|k| {
            let inv = params.sigma_x * norms[k] * q + dot(&params.beta[k], &params.mu[k]);
            params.p[k] * inv
        })
        .sum())
}

/// Exact `E[(f(X,S) - f_DP(X,S))^2]` for a group-affine `f`.
pub fn analytic_excess_risk(f: &GroupAffineRegressor, oracle: &FairOracle) -> Result<f64> {
    let p = &oracle.params;
    f.check_dims(p.d, p.m)?;
    let var = p.sigma_x * p.sigma_x;
    Ok((0..p.m)
        .map(|s| {
            let dw: Vec<f64> = f.w[s].iter().zip(&oracle.fdp.w[s]).map(|(a, b)| a - b).collect();
            let offset = dot(&dw, &p.mu[s]) + f.b[s] - oracle.fdp.b[s];
            p.p[s] * (var * dot(&dw, &dw) + offset * offset)
        })
        .sum())
}

/// `E[(f*(X,S) - f_DP(X,S))^2]` for the true parameters.
pub fn analytic_unfair_gap(params: &ModelParams, oracle: &FairOracle) -> Result<f64> {
    if params != &oracle.params {
        return Err(Error::InvalidParams("oracle was built from different parameters".into()));
    }
    Ok(oracle.unfair_gap())
}

/// The unconstrained regression function `f*(x, s) = <beta_s, x>`.
pub fn bayes_regressor(params: &ModelParams) -> GroupAffineRegressor {
    GroupAffineRegressor {
        w: params.beta.clone(),
        b: vec![0.0; params.m],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Regressor;

    fn scalar_pair() -> ModelParams {
        ModelParams {
            d: 1,
            m: 2,
            beta: vec![vec![1.0], vec![3.0]],
            mu: vec![vec![0.0], vec![0.0]],
            p: vec![0.5, 0.5],
            sigma_x: 1.0,
            sigma_xi: 1.0,
            b_bound: 3.0,
            u_bound: 1.0,
        }
    }

    #[test]
    fn scalar_pair_by_hand() {
        let oracle = build_fdp(&scalar_pair()).unwrap();
        assert_eq!(oracle.bar_norm, 2.0);
        for s in 0..2 {
            assert_eq!(oracle.fdp.predict(&[1.5], s), 3.0);
            let q = quantile_compose_fdp(&oracle.params, &[1.5], s).unwrap();
            assert!((q - 3.0).abs() < 1e-12);
        }
        // 1/2 (1 - 2)^2 + 1/2 (3 - 2)^2
        assert!((oracle.unfair_gap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_group_recovers_regression_function() {
        let params = ModelParams {
            d: 2,
            m: 1,
            beta: vec![vec![1.0, -2.0]],
            mu: vec![vec![0.3, 0.1]],
            p: vec![1.0],
            sigma_x: 0.7,
            sigma_xi: 1.0,
            b_bound: 3.0,
            u_bound: 1.0,
        };
        let oracle = build_fdp(&params).unwrap();
        let x = [0.4, -1.2];
        assert!((oracle.fdp.predict(&x, 0) - dot(&params.beta[0], &x)).abs() < 1e-14);
        assert!((quantile_compose_fdp(&params, &x, 0).unwrap() - dot(&params.beta[0], &x)).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_are_already_fair() {
        let mut params = scalar_pair();
        params.beta[1] = vec![1.0];
        params.mu = vec![vec![0.2], vec![0.2]];
        let oracle = build_fdp(&params).unwrap();
        assert_eq!(oracle.fdp.w, params.beta);
        assert!(oracle.unfair_gap().abs() < 1e-15);
    }

    #[test]
    fn median_maps_to_constant() {
        let mut params = scalar_pair();
        params.mu = vec![vec![0.5], vec![-0.25]];
        let oracle = build_fdp(&params).unwrap();
        for s in 0..2 {
            let v = quantile_compose_fdp(&params, &params.mu[s], s).unwrap();
            assert!((v - oracle.const_term).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_coefficient_is_rejected() {
        let mut params = scalar_pair();
        params.beta[1] = vec![0.0];
        assert!(matches!(build_fdp(&params), Err(Error::DegenerateDirection { group: 1 })));
        assert!(matches!(
            quantile_compose_fdp(&params, &[0.0], 0),
            Err(Error::DegenerateDirection { group: 1 })
        ));
    }

    #[test]
    fn excess_risk_offsets() {
        let oracle = build_fdp(&scalar_pair()).unwrap();
        assert_eq!(analytic_excess_risk(&oracle.fdp, &oracle).unwrap(), 0.0);
        let mut shifted = oracle.fdp.clone();
        shifted.b.iter_mut().for_each(|b| *b += 0.3);
        assert!((analytic_excess_risk(&shifted, &oracle).unwrap() - 0.09).abs() < 1e-15);
        let wrong = GroupAffineRegressor::zeros(2, 2);
        assert!(analytic_excess_risk(&wrong, &oracle).is_err());
    }

    #[test]
    fn gap_is_quadratically_homogeneous() {
        let mut params = scalar_pair();
        params.mu = vec![vec![0.4], vec![-0.1]];
        let g1 = build_fdp(&params).unwrap().unfair_gap();
        params.beta.iter_mut().flatten().for_each(|v| *v *= 2.5);
        let g2 = build_fdp(&params).unwrap().unfair_gap();
        assert!((g2 - 6.25 * g1).abs() < 1e-12);
    }
}
