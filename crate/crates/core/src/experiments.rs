//! Seeded Monte Carlo sweeps, rate fits and report tables.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, ComponentEstimates};
use crate::gaussian::normal_quantile;
use crate::linalg::min_eig_tail_check;
use crate::lower_bound::{
    assemble_fano, build_family, gv_code, hard_instance_eps, kl_conditional, kl_monte_carlo,
};
use crate::metrics::{
    mc_excess_risk, projected_mean_bounds, unfairness, w2_empirical, w2_gaussian, GaussianLaw1D,
};
use crate::model::{random_valid_params, sample_dataset, validate_params, ModelParams, RandomValidSpec};
use crate::oracle::{analytic_excess_risk, build_fdp, FairOracle};
use crate::rng;
use crate::vecops::{dot, norm, pairwise_sum};

/// Tag written in the first column of every sweep row.
pub const SWEEP_SCHEMA: &str = "fairreg-sweep-v1";

pub const SWEEP_HEADER: [&str; 21] = [
    "schema",
    "n",
    "d",
    "M",
    "B",
    "trial",
    "flagged",
    "excess_risk",
    "w2_unfairness",
    "kol_unfairness",
    "avg_w2_unfairness",
    "e_mean",
    "e_norm",
    "e_coef",
    "e_coef_prime",
    "e_mean_prime",
    "e_prob",
    "d2_lhs",
    "d2_rhs",
    "mc_risk",
    "mc_se",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    /// Overrides the generator's `B` when non-empty (random-valid only).
    #[serde(default, rename = "B")]
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamSource {
    /// One parameter set; every grid cell must match its `d` and `M`.
    Fixed { params: ModelParams },
    RandomValid(RandomValidSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: Grid,
    pub params: ParamSource,
    pub trials: usize,
    /// Monte Carlo samples for the cross-check risk column; 0 disables it.
    #[serde(default)]
    pub mc_samples: usize,
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_delta() -> f64 {
    0.1
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.n.is_empty() || g.d.is_empty() || g.m.is_empty() {
            return Err(Error::Config("grid lists must be non-empty".into()));
        }
        if g.n.contains(&0) || g.d.contains(&0) || g.m.contains(&0) {
            return Err(Error::Config("grid values must be positive".into()));
        }
        if g.b.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("grid B values must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if let ParamSource::Fixed { params } = &self.params {
            if !g.b.is_empty() {
                return Err(Error::Config("a B grid needs the random-valid generator".into()));
            }
            if g.d.iter().any(|&d| d != params.d) || g.m.iter().any(|&m| m != params.m) {
                return Err(Error::Config("grid d and M must match the fixed parameters".into()));
            }
            if let Some(v) = validate_params(params).first() {
                return Err(Error::Config(format!("fixed parameters invalid: {}", v.constraint)));
            }
        }
        Ok(())
    }
}

/// The six per-component errors of the plugin estimator, each measured
/// against its true target and averaged over groups with weights `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentErrors {
    /// `sum_s p_s <dir_s, mu_s - mu_hat_s>^2`.
    pub e_mean: f64,
    /// `(nbar_hat - nbar)^2`.
    pub e_norm: f64,
    /// `sum_s p_s ||dir_s - beta_s/||beta_s|| ||^2`.
    pub e_coef: f64,
    /// `(sum_s p_hat_s <beta'_s - beta_s, mu'_s>)^2`.
    pub e_coef_prime: f64,
    /// `(sum_s p_hat_s <beta_s, mu'_s - mu_s>)^2`.
    pub e_mean_prime: f64,
    /// `(sum_s (p_hat_s - p_s) <beta_s, mu_s>)^2`.
    pub e_prob: f64,
}

pub fn component_errors(est: &ComponentEstimates, params: &ModelParams) -> ComponentErrors {
    let m = params.m;
    let mut e = ComponentErrors {
        e_mean: 0.0,
        e_norm: (est.norm_hat_bar - params.mean_norm()).powi(2),
        e_coef: 0.0,
        e_coef_prime: 0.0,
        e_mean_prime: 0.0,
        e_prob: 0.0,
    };
    let (mut coef_prime, mut mean_prime, mut prob) = (0.0, 0.0, 0.0);
    for s in 0..m {
        let (beta, mu) = (&params.beta[s], &params.mu[s]);
        let gap: Vec<f64> = mu.iter().zip(&est.mu_hat[s]).map(|(a, b)| a - b).collect();
        e.e_mean += params.p[s] * dot(&est.dir_hat[s], &gap).powi(2);
        let len = norm(beta);
        e.e_coef += params.p[s]
            * est.dir_hat[s]
                .iter()
                .zip(beta)
                .map(|(u, b)| (u - b / len).powi(2))
                .sum::<f64>();
        let db: Vec<f64> = est.beta_prime_hat[s].iter().zip(beta).map(|(a, b)| a - b).collect();
        coef_prime += est.p_hat[s] * dot(&db, &est.mu_prime_hat[s]);
        let dm: Vec<f64> = est.mu_prime_hat[s].iter().zip(mu).map(|(a, b)| a - b).collect();
        mean_prime += est.p_hat[s] * dot(beta, &dm);
        prob += (est.p_hat[s] - params.p[s]) * dot(beta, mu);
    }
    e.e_coef_prime = coef_prime * coef_prime;
    e.e_mean_prime = mean_prime * mean_prime;
    e.e_prob = prob * prob;
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "B")]
    pub b: f64,
    pub trial: usize,
    /// The cell misses the estimator's sample-size hypothesis.
    pub flagged: bool,
    pub excess_risk: f64,
    pub w2_unfairness: f64,
    pub kol_unfairness: f64,
    pub avg_w2_unfairness: f64,
    pub errors: ComponentErrors,
    /// Largest pairwise W2 of the fitted regressor.
    pub d2_lhs: f64,
    /// Largest pairwise projected-mean bound.
    pub d2_rhs: f64,
    /// Whether every pair satisfied the projected-mean bound (tolerance 1e-9).
    pub d2_holds: bool,
    pub mc: Option<(f64, f64)>,
}

impl SweepRow {
    pub fn csv_record(&self) -> Vec<String> {
        let e = &self.errors;
        let (mc_risk, mc_se) = match self.mc {
            Some((r, s)) => (r.to_string(), s.to_string()),
            None => (String::new(), String::new()),
        };
        vec![
            SWEEP_SCHEMA.to_string(),
            self.n.to_string(),
            self.d.to_string(),
            self.m.to_string(),
            self.b.to_string(),
            self.trial.to_string(),
            u8::from(self.flagged).to_string(),
            self.excess_risk.to_string(),
            self.w2_unfairness.to_string(),
            self.kol_unfairness.to_string(),
            self.avg_w2_unfairness.to_string(),
            e.e_mean.to_string(),
            e.e_norm.to_string(),
            e.e_coef.to_string(),
            e.e_coef_prime.to_string(),
            e.e_mean_prime.to_string(),
            e.e_prob.to_string(),
            self.d2_lhs.to_string(),
            self.d2_rhs.to_string(),
            mc_risk,
            mc_se,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(SWEEP_HEADER)?;
        for row in &self.rows {
            wtr.write_record(row.csv_record())?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Per-cell aggregates in grid order.
    pub fn summaries(&self, delta: f64) -> Vec<CellSummary> {
        let mut out: Vec<CellSummary> = Vec::new();
        let mut start = 0;
        while start < self.rows.len() {
            let first = &self.rows[start];
            let end = start
                + self.rows[start..]
                    .iter()
                    .take_while(|r| r.n == first.n && r.d == first.d && r.m == first.m && r.b == first.b)
                    .count();
            out.push(CellSummary::from_rows(&self.rows[start..end], delta));
            start = end;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "B")]
    pub b: f64,
    pub trials: usize,
    pub flagged: bool,
    pub mean_risk: f64,
    pub se_risk: f64,
    /// `(1 - delta)`-quantile of the W2 unfairness over trials.
    pub unfairness_quantile: f64,
    pub mean_errors: ComponentErrors,
    pub d2_all_hold: bool,
}

impl CellSummary {
    fn from_rows(rows: &[SweepRow], delta: f64) -> Self {
        let k = rows.len() as f64;
        let col = |f: &dyn Fn(&SweepRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
        let avg = |v: Vec<f64>| pairwise_sum(&v) / k;
        let risks = col(&|r| r.excess_risk);
        let mean_risk = pairwise_sum(&risks) / k;
        let var = if rows.len() > 1 {
            pairwise_sum(&risks.iter().map(|r| (r - mean_risk).powi(2)).collect::<Vec<_>>()) / (k - 1.0)
        } else {
            0.0
        };
        CellSummary {
            n: rows[0].n,
            d: rows[0].d,
            m: rows[0].m,
            b: rows[0].b,
            trials: rows.len(),
            flagged: rows[0].flagged,
            mean_risk,
            se_risk: (var / k).sqrt(),
            unfairness_quantile: quantile(&col(&|r| r.w2_unfairness), 1.0 - delta),
            mean_errors: ComponentErrors {
                e_mean: avg(col(&|r| r.errors.e_mean)),
                e_norm: avg(col(&|r| r.errors.e_norm)),
                e_coef: avg(col(&|r| r.errors.e_coef)),
                e_coef_prime: avg(col(&|r| r.errors.e_coef_prime)),
                e_mean_prime: avg(col(&|r| r.errors.e_mean_prime)),
                e_prob: avg(col(&|r| r.errors.e_prob)),
            },
            d2_all_hold: rows.iter().all(|r| r.d2_holds),
        }
    }
}

/// Linear-interpolation quantile (the "type 7" rule).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Whether `n` meets `n >= 12 max(3d, 4 ln(M/delta)) / min_s p_s`.
pub fn sample_size_ok(n: usize, d: usize, p: &[f64], delta: f64) -> bool {
    let m = p.len() as f64;
    let pmin = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let need = 12.0 * (3.0 * d as f64).max(4.0 * (m / delta).ln()) / pmin;
    n as f64 >= need
}

/// Runs one trial: sample, fit, and score against the oracle.
pub fn run_trial(
    params: &ModelParams,
    oracle: &FairOracle,
    n: usize,
    trial_seed: u64,
    mc_samples: usize,
) -> Result<(ComponentErrors, SweepRowCore)> {
    let data = sample_dataset(params, n, rng::derive_seed(trial_seed, &[rng::purpose::DATASET]))?;
    let (f, est) = fit(&data, params.d, params.m, rng::derive_seed(trial_seed, &[rng::purpose::SPLIT]))?;
    let risk = analytic_excess_risk(&f, oracle)?;
    let report = unfairness(&f, params)?;
    let bounds = projected_mean_bounds(&f, &est, params)?;
    let mc = if mc_samples > 0 {
        Some(mc_excess_risk(
            &f,
            params,
            oracle,
            mc_samples,
            rng::derive_seed(trial_seed, &[rng::purpose::MONTE_CARLO]),
        )?)
    } else {
        None
    };
    Ok((
        component_errors(&est, params),
        SweepRowCore {
            excess_risk: risk,
            w2: report.w2_max,
            kol: report.kol_max,
            avg_w2: report.avg_w2,
            d2_lhs: bounds.iter().map(|b| b.w2).fold(0.0, f64::max),
            d2_rhs: bounds.iter().map(|b| b.bound).fold(0.0, f64::max),
            d2_holds: bounds.iter().all(|b| b.holds(1e-9)),
            mc,
        },
    ))
}

/// Per-trial scores that do not depend on the cell labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRowCore {
    pub excess_risk: f64,
    pub w2: f64,
    pub kol: f64,
    pub avg_w2: f64,
    pub d2_lhs: f64,
    pub d2_rhs: f64,
    pub d2_holds: bool,
    pub mc: Option<(f64, f64)>,
}

struct Cell {
    n: usize,
    params: ModelParams,
    oracle: FairOracle,
    flagged: bool,
}

fn cell_params(config: &SweepConfig, d: usize, m: usize, b: Option<f64>) -> Result<ModelParams> {
    match &config.params {
        ParamSource::Fixed { params } => Ok(params.clone()),
        ParamSource::RandomValid(spec) => {
            let mut spec = spec.clone();
            if let Some(b) = b {
                spec.b_bound = b;
            }
            let seed = rng::derive_seed(config.seed, &[rng::purpose::PARAMS, spec.b_bound.to_bits()]);
            random_valid_params(&spec, d, m, seed)
        }
    }
}

/// Runs every (cell, trial) pair. Parameters depend only on `(d, M, B)` and
/// the root seed, so an n-ladder reuses one model; rows come back in grid
/// order (d, M, B, n, trial) whatever the thread count.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let b_grid: Vec<Option<f64>> = if config.grid.b.is_empty() {
        vec![None]
    } else {
        config.grid.b.iter().copied().map(Some).collect()
    };
    let mut cells = Vec::new();
    for &d in &config.grid.d {
        for &m in &config.grid.m {
            for &b in &b_grid {
                let params = cell_params(config, d, m, b)?;
                let oracle = build_fdp(&params)?;
                for &n in &config.grid.n {
                    cells.push(Cell {
                        n,
                        flagged: !sample_size_ok(n, d, &params.p, config.delta),
                        params: params.clone(),
                        oracle: oracle.clone(),
                    });
                }
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.trials).map(move |t| (c, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(c, trial)| {
            let cell = &cells[c];
            let p = &cell.params;
            let seed = rng::derive_seed(
                config.seed,
                &[p.d as u64, p.m as u64, p.b_bound.to_bits(), cell.n as u64, trial as u64],
            );
            let (errors, core) = run_trial(p, &cell.oracle, cell.n, seed, config.mc_samples)?;
            Ok(SweepRow {
                n: cell.n,
                d: p.d,
                m: p.m,
                b: p.b_bound,
                trial,
                flagged: cell.flagged,
                excess_risk: core.excess_risk,
                w2_unfairness: core.w2,
                kol_unfairness: core.kol,
                avg_w2_unfairness: core.avg_w2,
                errors,
                d2_lhs: core.d2_lhs,
                d2_rhs: core.d2_rhs,
                d2_holds: core.d2_holds,
                mc: core.mc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive values".into()));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::Domain("log-log fit needs at least 3 distinct x values".into()));
    }
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit { slope, intercept: my - slope * mx, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundConfig {
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub n_grid: Vec<usize>,
    pub b_s: Vec<f64>,
    pub sigma_x: f64,
    pub sigma_xi: f64,
    pub seed: u64,
    /// Random draws offered to the greedy code search.
    pub code_budget: usize,
    /// Codewords whose instances are fitted by the estimator.
    pub instances: usize,
    /// Estimator fits per instance and n.
    pub trials: usize,
}

impl LowerBoundConfig {
    pub fn new(d: usize, m: usize, n_grid: Vec<usize>, b: f64, seed: u64) -> Self {
        LowerBoundConfig {
            d,
            m,
            n_grid,
            b_s: vec![b; m],
            sigma_x: 1.0,
            sigma_xi: 1.0,
            seed,
            code_budget: 64,
            instances: 4,
            trials: 50,
        }
    }
}

pub const LOWER_BOUND_HEADER: [&str; 11] = [
    "d",
    "M",
    "n",
    "epsilon",
    "K",
    "kl",
    "fano_value",
    "estimator_risk",
    "estimator_se",
    "eps_clamped",
    "min_block_distance",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub n: usize,
    /// Minimum pairwise two-point separation over the code.
    pub epsilon: f64,
    pub k: usize,
    /// Maximum pairwise KL over the code.
    pub kl: f64,
    pub fano_value: f64,
    pub estimator_risk: f64,
    pub estimator_se: f64,
    pub eps_clamped: bool,
    pub min_block_distance: Option<u32>,
}

impl LowerBoundRow {
    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.d.to_string(),
            self.m.to_string(),
            self.n.to_string(),
            self.epsilon.to_string(),
            self.k.to_string(),
            self.kl.to_string(),
            self.fano_value.to_string(),
            self.estimator_risk.to_string(),
            self.estimator_se.to_string(),
            u8::from(self.eps_clamped).to_string(),
            self.min_block_distance.map(|v| v.to_string()).unwrap_or_default(),
        ]
    }
}

pub fn write_lower_bound_csv<W: Write>(rows: &[LowerBoundRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(LOWER_BOUND_HEADER)?;
    for row in rows {
        wtr.write_record(row.csv_record())?;
    }
    wtr.flush()?;
    Ok(())
}

/// For each `n`: hard-instance `eps_s` from the expected group counts, the
/// Fano bound over a greedy code with per-block distance `ceil((d-1)/8)`, and
/// the estimator's mean excess risk on the first few codeword instances.
pub fn run_lower_bound_report(cfg: &LowerBoundConfig) -> Result<Vec<LowerBoundRow>> {
    let (d, m) = (cfg.d, cfg.m);
    if d < 2 || m * (d - 1) <= 16 {
        return Err(Error::Precondition(format!("need M(d-1) > 16, got M = {m}, d = {d}")));
    }
    if cfg.b_s.len() != m {
        return Err(Error::Config(format!("B_s has {} entries, expected {m}", cfg.b_s.len())));
    }
    if cfg.n_grid.is_empty() || cfg.instances == 0 || cfg.trials == 0 {
        return Err(Error::Config("n grid, instances and trials must be non-empty".into()));
    }
    let p = vec![1.0 / m as f64; m];
    let min_dist = (d - 1).div_ceil(8) as u32;
    let code = gv_code(d - 1, m, min_dist, cfg.code_budget, cfg.seed)?;
    if code.len() < 2 {
        return Err(Error::Precondition("code search produced fewer than 2 codewords".into()));
    }
    cfg.n_grid
        .iter()
        .map(|&n| {
            let counts: Vec<usize> = p.iter().map(|q| (q * n as f64).round() as usize).collect();
            let eps = hard_instance_eps(d, m, cfg.sigma_xi, cfg.sigma_x, &cfg.b_s, &counts)?;
            let family = build_family(d, m, &cfg.b_s, &eps.eps)?
                .with_sigmas(cfg.sigma_x, cfg.sigma_xi)
                .with_weights(p.clone())?
                .with_code(&code)?;
            let fano = assemble_fano(&family, &counts)?;
            let jobs: Vec<(usize, usize)> = (0..cfg.instances.min(code.len()))
                .flat_map(|i| (0..cfg.trials).map(move |t| (i, t)))
                .collect();
            let risks = jobs
                .par_iter()
                .map(|&(i, t)| {
                    let params = family.params_of(&family.code[i]);
                    let oracle = build_fdp(&params)?;
                    let seed = rng::derive_seed(cfg.seed, &[n as u64, i as u64, t as u64]);
                    let data = sample_dataset(&params, n, rng::derive_seed(seed, &[rng::purpose::DATASET]))?;
                    let (f, _) = fit(&data, d, m, rng::derive_seed(seed, &[rng::purpose::SPLIT]))?;
                    analytic_excess_risk(&f, &oracle)
                })
                .collect::<Result<Vec<f64>>>()?;
            let k = risks.len() as f64;
            let mean = pairwise_sum(&risks) / k;
            let var = pairwise_sum(&risks.iter().map(|r| (r - mean).powi(2)).collect::<Vec<_>>())
                / (k - 1.0).max(1.0);
            Ok(LowerBoundRow {
                d,
                m,
                n,
                epsilon: fano.epsilon,
                k: fano.k,
                kl: fano.max_kl,
                fano_value: fano.fano_value,
                estimator_risk: mean,
                estimator_se: (var / k).sqrt(),
                eps_clamped: eps.clamped.iter().any(|&c| c),
                min_block_distance: code.min_block_distance,
            })
        })
        .collect()
}

pub const DIAGNOSE_HEADER: [&str; 6] = ["suite", "case", "computed", "reference", "tolerance", "pass"];

/// One check of a closed form against an independent oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRow {
    pub suite: String,
    pub case: String,
    pub computed: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn write_diagnose_csv<W: Write>(rows: &[DiagnoseRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(DIAGNOSE_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.suite.clone(),
            r.case.clone(),
            r.computed.to_string(),
            r.reference.to_string(),
            r.tolerance.to_string(),
            u8::from(r.pass).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn quantile_grid(law: GaussianLaw1D, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| law.mean + law.std * normal_quantile((i as f64 + 0.5) / k as f64))
        .collect()
}

/// Eigenvalue tail, Gaussian W2 and KL checks.
///
/// * `eig`: empirical `P(lambda_min < t)` against the tail bound.
/// * `w2`: closed-form W2 against the W2 of quantile-grid samples.
/// * `kl`: packed-family KL against its log-likelihood-ratio estimate
///   (tolerance four standard errors).
pub fn run_diagnostics(seed: u64) -> Result<Vec<DiagnoseRow>> {
    let mut rows = Vec::new();

    for (d, n) in [(2usize, 40usize), (3, 60)] {
        let mu = vec![0.5; d];
        let grid = [1e-6, 1e-5, 0.05, 0.2];
        for r in min_eig_tail_check(&mu, 1.0, n, &grid, 400, rng::derive_seed(seed, &[rng::purpose::DIAGNOSTIC, d as u64]))? {
            rows.push(DiagnoseRow {
                suite: "eig".into(),
                case: format!("d={d} n={n} t={}", r.t),
                computed: r.empirical_tail,
                reference: r.bound,
                tolerance: 0.0,
                pass: r.holds(),
            });
        }
    }

    let mut r = rng::stream(seed, &[rng::purpose::DIAGNOSTIC, 100]);
    for case in 0..6 {
        use rand::Rng as _;
        let a = GaussianLaw1D::new(r.random_range(-2.0..2.0), r.random_range(0.1..2.0))?;
        let b = GaussianLaw1D::new(r.random_range(-2.0..2.0), r.random_range(0.1..2.0))?;
        let exact = w2_gaussian(a, b);
        let approx = w2_empirical(&quantile_grid(a, 20_000), &quantile_grid(b, 20_000))?;
        let tol = 1e-2 * (1.0 + exact);
        rows.push(DiagnoseRow {
            suite: "w2".into(),
            case: format!("pair {case}"),
            computed: exact,
            reference: approx,
            tolerance: tol,
            pass: (exact - approx).abs() <= tol,
        });
    }

    let fam = build_family(6, 3, &[1.0, 0.7, 0.5], &[0.3, 0.4, 0.5])?.with_sigmas(1.0, 0.8);
    let words = gv_code(5, 3, 1, 8, rng::derive_seed(seed, &[rng::purpose::DIAGNOSTIC, 200]))?;
    let counts = [50, 70, 90];
    for (i, pair) in words.codewords.windows(2).take(3).enumerate() {
        let (a, b) = (fam.params_of(&pair[0]), fam.params_of(&pair[1]));
        let exact = kl_conditional(&a, &b, &counts)?;
        let (est, se) = kl_monte_carlo(&a, &b, &counts, 200_000, rng::derive_seed(seed, &[rng::purpose::DIAGNOSTIC, 300, i as u64]))?;
        rows.push(DiagnoseRow {
            suite: "kl".into(),
            case: format!("pair {i}"),
            computed: exact,
            reference: est,
            tolerance: 4.0 * se,
            pass: (exact - est).abs() <= 4.0 * se,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupAffineRegressor;

    fn small_config() -> SweepConfig {
        SweepConfig::from_json(
            r#"{
                "grid": {"n": [400, 800], "d": [2], "M": [2]},
                "params": {"kind": "random_valid", "B": 2.0, "U": 1.0},
                "trials": 3,
                "seed": 11
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let inv: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 3.0 / i as f64)).collect();
        let fit = fit_slope(&inv).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-10 && (fit.r2 - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        let sqrt: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 2.0 / (i as f64).sqrt())).collect();
        assert!((fit_slope(&sqrt).unwrap().slope + 0.5).abs() < 1e-10);
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 1.0), (2.0, 3.0)]).is_err());
        assert!(fit_slope(&[(1.0, 1.0), (2.0, -1.0), (3.0, 3.0)]).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_bad_values() {
        let base = r#"{"grid": {"n": [10], "d": [2], "M": [2]}, "params": {"kind": "random_valid", "B": 1.0, "U": 1.0}, "seed": 1, "trials": TRIALS}"#;
        assert!(SweepConfig::from_json(&base.replace("TRIALS", "1")).is_ok());
        assert!(matches!(SweepConfig::from_json(&base.replace("TRIALS", "0")), Err(Error::Config(_))));
        assert!(matches!(
            SweepConfig::from_json(&base.replace("[10]", "[0]").replace("TRIALS", "1")),
            Err(Error::Config(_))
        ));
        assert!(SweepConfig::from_json("{").is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_ordered() {
        let cfg = small_config();
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.rows.iter().map(|r| (r.n, r.trial)).collect::<Vec<_>>()[..3], [(400, 0), (400, 1), (400, 2)]);
        let text = String::from_utf8(ba).unwrap();
        assert!(text.starts_with("schema,n,d,M,B,trial"));
        assert!(text.lines().skip(1).all(|l| l.starts_with(SWEEP_SCHEMA)));
        for r in &a.rows {
            assert!(r.excess_risk >= 0.0 && r.d2_holds);
            let e = r.errors;
            assert!([e.e_mean, e.e_norm, e.e_coef, e.e_coef_prime, e.e_mean_prime, e.e_prob]
                .iter()
                .all(|v| *v >= 0.0));
        }
        assert_eq!(a.summaries(0.1).len(), 2);
    }

    #[test]
    fn flagged_small_cells_fit_the_zero_regressor() {
        let mut cfg = small_config();
        cfg.grid.n = vec![30];
        let res = run_sweep(&cfg).unwrap();
        let params = cell_params(&cfg, 2, 2, None).unwrap();
        let oracle = build_fdp(&params).unwrap();
        let zero = analytic_excess_risk(&GroupAffineRegressor::zeros(2, 2), &oracle).unwrap();
        for r in &res.rows {
            assert!(r.flagged);
            assert_eq!(r.excess_risk, zero);
        }
    }

    #[test]
    fn sample_size_rule() {
        assert!(sample_size_ok(360, 5, &[0.5, 0.5], 0.1));
        assert!(!sample_size_ok(359, 5, &[0.5, 0.5], 0.1));
        // log term dominates: 12 * 4 ln(20) / 0.5
        let need = 12.0 * 4.0 * 20f64.ln() / 0.5;
        assert!(sample_size_ok(need.ceil() as usize, 1, &[0.5, 0.5], 0.1));
        assert!(!sample_size_ok(need.floor() as usize, 1, &[0.5, 0.5], 0.1));
    }

    #[test]
    fn component_errors_vanish_at_truth() {
        let params = random_valid_params(&RandomValidSpec::new(2.0, 1.0), 3, 3, 5).unwrap();
        let norms = params.beta_norms();
        let est = ComponentEstimates {
            p_hat: params.p.clone(),
            norm_hat_s: norms.clone(),
            norm_hat_bar: params.mean_norm(),
            dir_hat: params.beta.iter().zip(&norms).map(|(b, n)| b.iter().map(|v| v / n).collect()).collect(),
            mu_hat: params.mu.clone(),
            beta_prime_hat: params.beta.clone(),
            mu_prime_hat: params.mu.clone(),
            gate_18d: vec![true; 3],
            gate_12d: vec![true; 3],
        };
        let e = component_errors(&est, &params);
        assert!([e.e_mean, e.e_norm, e.e_coef, e.e_coef_prime, e.e_mean_prime, e.e_prob]
            .iter()
            .all(|v| *v < 1e-28));
        let oracle = build_fdp(&params).unwrap();
        assert!(analytic_excess_risk(&est.to_regressor(), &oracle).unwrap() < 1e-24);
    }

    #[test]
    fn lower_bound_report_shape() {
        let mut cfg = LowerBoundConfig::new(9, 4, vec![4000, 8000, 16000], 1.0, 3);
        cfg.trials = 4;
        cfg.instances = 2;
        let rows = run_lower_bound_report(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        for w in rows.windows(2) {
            // eps^2 scales as 1/n, so the bound halves exactly.
            assert!((w[0].fano_value / w[1].fano_value - 2.0).abs() < 1e-9);
            assert!((w[0].kl - w[1].kl).abs() < 1e-9);
        }
        assert!(rows.iter().all(|r| r.kl <= 1.0 + 1e-12 && r.fano_value > 0.0));
        assert!(run_lower_bound_report(&LowerBoundConfig::new(5, 4, vec![100], 1.0, 0)).is_err());
    }
}
