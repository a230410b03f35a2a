//! The data-generating model: parameters, constraint checks, sampling.
//!
//! Features are drawn as `X | S = s ~ N(mu_s, sigma_x^2 I)` and outcomes as
//! `Y = <beta_s, X> + xi` with `xi ~ N(0, sigma_xi^2)`. Group labels are
//! 0-based in the API and 1-based in CSV files.

use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::vecops::{dot, norm};

/// Absolute slack allowed on the coefficient-diversity constraint.
pub const CONSTRAINT_TOL: f64 = 1e-9;
/// Tolerance on `sum(p) == 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub beta: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub sigma_x: f64,
    pub sigma_xi: f64,
    #[serde(rename = "B")]
    pub b_bound: f64,
    #[serde(rename = "U")]
    pub u_bound: f64,
}

/// One violated constraint and the value that violated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub measured: f64,
    pub limit: f64,
}

impl ModelParams {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn beta_norms(&self) -> Vec<f64> {
        self.beta.iter().map(|b| norm(b)).collect()
    }

    /// The weighted average coefficient norm `sum_s p_s ||beta_s||`.
    pub fn mean_norm(&self) -> f64 {
        self.p
            .iter()
            .zip(&self.beta)
            .map(|(p, b)| p * norm(b))
            .sum()
    }

    /// `(sum_s p_s ||beta_s||)^2 * (1/M) sum_s ||beta_s||^-2`, or `None` when
    /// some coefficient vector is zero.
    pub fn diversity_factor(&self) -> Option<f64> {
        let norms = self.beta_norms();
        if norms.iter().any(|&n| n <= 0.0) {
            return None;
        }
        let inv: f64 = norms.iter().map(|n| n.powi(-2)).sum::<f64>() / self.m as f64;
        Some(self.mean_norm().powi(2) * inv)
    }

    /// Checks shapes. Unlike [`validate_params`] this does not look at the
    /// constraint set, and it accepts a single group.
    pub fn check_shapes(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 {
            return Err(Error::InvalidParams("d and M must be positive".into()));
        }
        if self.beta.len() != self.m || self.mu.len() != self.m || self.p.len() != self.m {
            return Err(Error::InvalidParams(format!(
                "expected {} groups in beta, mu and p",
                self.m
            )));
        }
        for v in self.beta.iter().chain(&self.mu) {
            if v.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: v.len(),
                });
            }
        }
        let all = self
            .beta
            .iter()
            .chain(&self.mu)
            .flatten()
            .chain(&self.p)
            .chain([&self.sigma_x, &self.sigma_xi, &self.b_bound, &self.u_bound]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Lists every violated constraint of the parameter set. An empty list means
/// the parameters are admissible.
pub fn validate_params(params: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |constraint: &str, measured: f64, limit: f64| {
        out.push(Violation {
            constraint: constraint.to_string(),
            measured,
            limit,
        })
    };
    if params.d < 1 {
        push("d >= 1", params.d as f64, 1.0);
    }
    if params.m < 2 {
        push("M >= 2", params.m as f64, 2.0);
    }
    if let Err(e) = params.check_shapes() {
        push(&format!("shape: {e}"), f64::NAN, f64::NAN);
        return out;
    }
    let p_sum: f64 = params.p.iter().sum();
    if (p_sum - 1.0).abs() > PROB_SUM_TOL {
        push("p sums to 1", p_sum, 1.0);
    }
    for (s, &ps) in params.p.iter().enumerate() {
        if ps <= 0.0 {
            push(&format!("p[{s}] > 0"), ps, 0.0);
        }
    }
    if params.sigma_x <= 0.0 {
        push("sigma_x > 0", params.sigma_x, 0.0);
    }
    if params.sigma_xi <= 0.0 {
        push("sigma_xi > 0", params.sigma_xi, 0.0);
    }
    if params.b_bound <= 0.0 {
        push("B > 0", params.b_bound, 0.0);
    }
    if params.u_bound <= 0.0 {
        push("U > 0", params.u_bound, 0.0);
    }
    let max_norm = params.beta_norms().into_iter().fold(0.0, f64::max);
    if max_norm > params.b_bound + CONSTRAINT_TOL {
        push("max-norm violated: max_s ||beta_s|| <= B", max_norm, params.b_bound);
    }
    if let Some(factor) = params.diversity_factor() {
        let limit = params.b_bound * params.b_bound;
        if factor > limit + CONSTRAINT_TOL {
            push("diversity violated: (sum p||beta||)^2 mean(||beta||^-2) <= B^2", factor, limit);
        }
    }
    for (s, mu) in params.mu.iter().enumerate() {
        let n = norm(mu);
        if n > params.u_bound + CONSTRAINT_TOL {
            push(&format!("mean-norm violated: ||mu[{s}]|| <= U"), n, params.u_bound);
        }
    }
    out
}

fn ensure_valid(params: &ModelParams) -> Result<()> {
    let report = validate_params(params);
    if report.is_empty() {
        Ok(())
    } else {
        let msg = report
            .iter()
            .map(|v| format!("{} (measured {}, limit {})", v.constraint, v.measured, v.limit))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidParams(msg))
    }
}

/// n observations stored column-wise: `x` is row-major `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub m: usize,
    pub x: Vec<f64>,
    pub s: Vec<usize>,
    pub y: Vec<f64>,
    pub group_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(d: usize, m: usize, x: Vec<f64>, s: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        let n = s.len();
        if y.len() != n || x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: x.len(),
            });
        }
        let mut group_counts = vec![0; m];
        for &g in &s {
            if g >= m {
                return Err(Error::GroupOutOfRange { group: g, groups: m });
            }
            group_counts[g] += 1;
        }
        Ok(Dataset {
            d,
            m,
            x,
            s,
            y,
            group_counts,
        })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn records(&self) -> impl Iterator<Item = (&[f64], usize, f64)> + '_ {
        (0..self.n()).map(move |i| (self.row(i), self.s[i], self.y[i]))
    }

    /// Indices of the observations in group `g`, in dataset order.
    pub fn group_indices(&self, g: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i] == g).collect()
    }

    /// Writes `x_1,...,x_d,s,y` with 1-based group labels.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x_{j}")).collect();
        header.push("s".into());
        header.push("y".into());
        wtr.write_record(&header)?;
        for (x, s, y) in self.records() {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push((s + 1).to_string());
            rec.push(y.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`Dataset::write_csv`]. When `m` is
    /// `None` the group count is the largest label present.
    pub fn read_csv<R: Read>(r: R, m: Option<usize>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols = header.len();
        if cols < 3 || &header[cols - 2] != "s" || &header[cols - 1] != "y" {
            return Err(Error::Config("dataset header must be x_1,...,x_d,s,y".into()));
        }
        let d = cols - 2;
        let (mut x, mut s, mut y) = (Vec::new(), Vec::new(), Vec::new());
        let parse = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {v:?}: {e}")))
        };
        for rec in rdr.records() {
            let rec = rec?;
            for j in 0..d {
                x.push(parse(&rec[j])?);
            }
            let label: usize = rec[d]
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad group label {:?}: {e}", &rec[d])))?;
            if label == 0 {
                return Err(Error::Config("group labels are 1-based".into()));
            }
            s.push(label - 1);
            y.push(parse(&rec[d + 1])?);
        }
        let m = m.unwrap_or_else(|| s.iter().max().map_or(0, |g| g + 1));
        Dataset::new(d, m, x, s, y)
    }
}

/// Draws `n` observations. Deterministic for a fixed seed.
pub fn sample_dataset(params: &ModelParams, n: usize, seed: u64) -> Result<Dataset> {
    ensure_valid(params)?;
    Ok(sample_unchecked(params, n, seed))
}

pub(crate) fn sample_unchecked(params: &ModelParams, n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, &[rng::purpose::DATASET]);
    let d = params.d;
    let cumulative = cumulative_weights(&params.p);
    let mut x = Vec::with_capacity(n * d);
    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let g = draw_group(&cumulative, &mut rng);
        let start = x.len();
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.push(params.mu[g][j] + params.sigma_x * z);
        }
        let noise: f64 = StandardNormal.sample(&mut rng);
        y.push(dot(&params.beta[g], &x[start..]) + params.sigma_xi * noise);
        s.push(g);
    }
    Dataset::new(d, params.m, x, s, y).expect("sampled dataset is well formed")
}

pub(crate) fn cumulative_weights(p: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    let mut acc = 0.0;
    p.iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

pub(crate) fn draw_group(cumulative: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Draws one feature vector for group `g`.
pub(crate) fn draw_features(params: &ModelParams, g: usize, rng: &mut Rng, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *o = params.mu[g][j] + params.sigma_x * z;
    }
}

/// Anything that maps `(x, s)` to a prediction.
pub trait Regressor: Sync {
    fn predict(&self, x: &[f64], s: usize) -> f64;
}

impl<F> Regressor for F
where
    F: Fn(&[f64], usize) -> f64 + Sync,
{
    fn predict(&self, x: &[f64], s: usize) -> f64 {
        self(x, s)
    }
}

/// `f(x, s) = <w_s, x> + b_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAffineRegressor {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl GroupAffineRegressor {
    pub fn new(w: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        if w.len() != b.len() || w.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: b.len(),
            });
        }
        let d = w[0].len();
        if let Some(bad) = w.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(GroupAffineRegressor { w, b })
    }

    pub fn zeros(d: usize, m: usize) -> Self {
        GroupAffineRegressor {
            w: vec![vec![0.0; d]; m],
            b: vec![0.0; m],
        }
    }

    pub fn d(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn m(&self) -> usize {
        self.w.len()
    }

    pub fn check_dims(&self, d: usize, m: usize) -> Result<()> {
        if self.m() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.m(),
            });
        }
        if self.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.d(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64], s: usize) -> Result<f64> {
        if s >= self.m() {
            return Err(Error::GroupOutOfRange {
                group: s,
                groups: self.m(),
            });
        }
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        Ok(self.predict(x, s))
    }
}

impl Regressor for GroupAffineRegressor {
    fn predict(&self, x: &[f64], s: usize) -> f64 {
        dot(&self.w[s], x) + self.b[s]
    }
}

/// Laws for the coefficient norms drawn by [`random_valid_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormLaw {
    /// Independent log-uniform draws in `[lo * B, hi * B]`, rejected until the
    /// diversity constraint holds.
    LogUniform { lo: f64, hi: f64 },
    /// Deterministic geometric ladder from `hi * B` (group 1) down to `lo * B`.
    Geometric { lo: f64, hi: f64 },
}

impl Default for NormLaw {
    fn default() -> Self {
        NormLaw::LogUniform { lo: 0.25, hi: 1.0 }
    }
}

/// Recipe for drawing an admissible parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomValidSpec {
    #[serde(rename = "B")]
    pub b_bound: f64,
    #[serde(rename = "U")]
    pub u_bound: f64,
    #[serde(default = "one")]
    pub sigma_x: f64,
    #[serde(default = "one")]
    pub sigma_xi: f64,
    /// Group weights; balanced when absent.
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    #[serde(default)]
    pub norms: NormLaw,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn one() -> f64 {
    1.0
}

fn default_attempts() -> usize {
    10_000
}

impl RandomValidSpec {
    pub fn new(b_bound: f64, u_bound: f64) -> Self {
        RandomValidSpec {
            b_bound,
            u_bound,
            sigma_x: 1.0,
            sigma_xi: 1.0,
            p: None,
            norms: NormLaw::default(),
            max_attempts: default_attempts(),
        }
    }
}

/// Directions uniform on the sphere, norms from `spec.norms`, means uniform in
/// the `U`-ball.
pub fn random_valid_params(spec: &RandomValidSpec, d: usize, m: usize, seed: u64) -> Result<ModelParams> {
    if d == 0 || m < 2 {
        return Err(Error::Config("random-valid generation needs d >= 1 and M >= 2".into()));
    }
    let p = match &spec.p {
        Some(p) if p.len() == m => p.clone(),
        Some(p) => {
            return Err(Error::Config(format!("p has {} entries, expected {m}", p.len())));
        }
        None => vec![1.0 / m as f64; m],
    };
    let mut rng = rng::stream(seed, &[rng::purpose::PARAMS, d as u64, m as u64]);
    for _ in 0..spec.max_attempts.max(1) {
        let norms: Vec<f64> = match spec.norms {
            NormLaw::LogUniform { lo, hi } => {
                let (a, b) = ((lo * spec.b_bound).ln(), (hi * spec.b_bound).ln());
                (0..m).map(|_| (a + (b - a) * rng.random::<f64>()).exp()).collect()
            }
            NormLaw::Geometric { lo, hi } => (0..m)
                .map(|s| {
                    let t = s as f64 / (m - 1) as f64;
                    spec.b_bound * hi * (lo / hi).powf(t)
                })
                .collect(),
        };
        let beta = norms
            .iter()
            .map(|&r| {
                let u = unit_vector(d, &mut rng);
                u.into_iter().map(|v| v * r).collect()
            })
            .collect();
        let mu = (0..m)
            .map(|_| {
                let u = unit_vector(d, &mut rng);
                let radius = spec.u_bound * rng.random::<f64>().powf(1.0 / d as f64);
                u.into_iter().map(|v| v * radius).collect()
            })
            .collect();
        let params = ModelParams {
            d,
            m,
            beta,
            mu,
            p: p.clone(),
            sigma_x: spec.sigma_x,
            sigma_xi: spec.sigma_xi,
            b_bound: spec.b_bound,
            u_bound: spec.u_bound,
        };
        if validate_params(&params).is_empty() {
            return Ok(params);
        }
    }
    Err(Error::Config(format!(
        "no admissible parameters found in {} attempts",
        spec.max_attempts
    )))
}

fn unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_group(beta: [[f64; 2]; 2], b: f64) -> ModelParams {
        ModelParams {
            d: 2,
            m: 2,
            beta: beta.iter().map(|r| r.to_vec()).collect(),
            mu: vec![vec![0.0; 2]; 2],
            p: vec![0.5, 0.5],
            sigma_x: 1.0,
            sigma_xi: 1.0,
            b_bound: b,
            u_bound: 1.0,
        }
    }

    #[test]
    fn orthogonal_unit_coefficients_are_admissible() {
        let params = two_group([[1.0, 0.0], [0.0, 1.0]], 1.0);
        // (1/2 + 1/2)^2 * (1/2)(1 + 1) = 1
        assert!((params.diversity_factor().unwrap() - 1.0).abs() < 1e-15);
        assert!(validate_params(&params).is_empty());
    }

    #[test]
    fn oversized_coefficient_is_reported() {
        let params = two_group([[2.0, 0.0], [0.0, 1.0]], 1.0);
        let report = validate_params(&params);
        let hit = report
            .iter()
            .find(|v| v.constraint.starts_with("max-norm violated"))
            .expect("max-norm violation");
        assert_eq!(hit.measured, 2.0);
    }

    #[test]
    fn equal_coefficients_on_the_boundary() {
        let params = two_group([[0.6, 0.8], [0.6, 0.8]], 1.0);
        assert!(validate_params(&params).is_empty());
    }

    #[test]
    fn bad_probabilities_are_reported() {
        let mut params = two_group([[1.0, 0.0], [0.0, 1.0]], 1.0);
        params.p = vec![0.7, 0.4];
        let report = validate_params(&params);
        assert!(report.iter().any(|v| v.constraint == "p sums to 1"));
    }

    #[test]
    fn single_group_is_rejected() {
        let mut params = two_group([[1.0, 0.0], [0.0, 1.0]], 1.0);
        params.m = 1;
        params.beta.truncate(1);
        params.mu.truncate(1);
        params.p = vec![1.0];
        assert!(validate_params(&params).iter().any(|v| v.constraint == "M >= 2"));
    }

    #[test]
    fn json_field_names() {
        let params = two_group([[1.0, 0.0], [0.0, 1.0]], 1.0);
        let v: serde_json::Value = serde_json::from_str(&params.to_json().unwrap()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["B", "M", "U", "beta", "d", "mu", "p", "sigma_x", "sigma_xi"]);
        assert_eq!(ModelParams::from_json(&params.to_json().unwrap()).unwrap(), params);
    }

    #[test]
    fn degenerate_noise_gives_zero_outcomes() {
        let mut params = two_group([[1.0, 0.0], [0.0, 1.0]], 1.0);
        params.sigma_xi = 1e-300;
        params.sigma_x = 1e-9;
        let data = sample_dataset(&params, 1000, 3).unwrap();
        assert!(data.y.iter().all(|y| y.abs() < 1e-6));
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = two_group([[1.0, 0.0], [0.0, 1.0]], 1.0);
        let a = sample_dataset(&params, 500, 11).unwrap();
        let b = sample_dataset(&params, 500, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&params, 500, 12).unwrap();
        assert_ne!(a.group_counts, c.group_counts);
    }

    #[test]
    fn group_frequencies_follow_weights() {
        let mut params = two_group([[1.0, 0.0], [0.0, 1.0]], 1.0);
        params.p = vec![0.3, 0.7];
        let n = 1_000_000;
        let data = sample_dataset(&params, n, 5).unwrap();
        let freq = data.group_counts[0] as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.002, "freq = {freq}");
        assert_eq!(data.group_counts.iter().sum::<usize>(), n);
    }

    #[test]
    fn csv_round_trip() {
        let params = two_group([[1.0, 0.5], [0.0, 1.0]], 2.0);
        let data = sample_dataset(&params, 50, 1).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,s,y\n"));
        let back = Dataset::read_csv(buf.as_slice(), Some(2)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn evaluate_affine() {
        let f = GroupAffineRegressor::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![3.0, 0.0]).unwrap();
        assert_eq!(f.evaluate(&[5.0, -2.0], 0).unwrap(), 3.0);
        assert_eq!(f.evaluate(&[2.0, 9.0], 1).unwrap(), 2.0);
        assert!(matches!(
            f.evaluate(&[1.0], 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            f.evaluate(&[1.0, 1.0], 2),
            Err(Error::GroupOutOfRange { .. })
        ));
    }

    #[test]
    fn random_valid_params_are_valid() {
        for seed in 0..20 {
            let params = random_valid_params(&RandomValidSpec::new(2.0, 1.0), 4, 3, seed).unwrap();
            assert!(validate_params(&params).is_empty());
        }
        let spec = RandomValidSpec {
            norms: NormLaw::Geometric { lo: 0.25, hi: 0.5 },
            ..RandomValidSpec::new(2.0, 1.0)
        };
        let params = random_valid_params(&spec, 5, 3, 0).unwrap();
        let norms = params.beta_norms();
        assert!((norms[0] - 1.0).abs() < 1e-12 && (norms[2] - 0.5).abs() < 1e-12);
    }
}
