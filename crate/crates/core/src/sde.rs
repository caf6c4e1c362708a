//! Euler–Maruyama integration of the rank-based diffusion, with or without
//! reflection at zero, and drift selection inside the inclusion's hull at
//! tied states.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_nonincreasing, DiffusionParams};
use crate::queue::ScaledPath;
use crate::reflect::reflect_step;
use crate::rng::{stream_rng, Stream};

/// Drift selection on tie-blocks. Off ties every rule gives `b_{rank(i)}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Smaller index gets the smaller rank (the rank function itself).
    Index,
    ReverseIndex,
    /// Every member gets the mean of `b` over the block's rank range.
    #[default]
    BlockAverage,
    /// Uniformly random assignment of the block's ranks, seeded per run.
    RandomShuffle,
}

impl std::fmt::Display for TieRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TieRule::Index => "index",
            TieRule::ReverseIndex => "reverse-index",
            TieRule::BlockAverage => "block-average",
            TieRule::RandomShuffle => "random-shuffle",
        })
    }
}

/// Scratch state for drift selection.
struct DriftSelector {
    rule: TieRule,
    order: Vec<usize>,
    shuffle: ChaCha8Rng,
}

impl DriftSelector {
    fn new(rule: TieRule, dim: usize, seed: u64) -> Self {
        DriftSelector {
            rule,
            order: (0..dim).collect(),
            shuffle: stream_rng(seed, Stream::TieShuffle),
        }
    }

    fn select(&mut self, x: &[f64], b: &[f64], beta: &mut [f64]) {
        let order = &mut self.order;
        for (k, o) in order.iter_mut().enumerate() {
            *o = k;
        }
        order.sort_by(|&a, &c| x[a].partial_cmp(&x[c]).expect("finite state"));
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && x[order[end]] == x[order[start]] {
                end += 1;
            }
            let block = &mut order[start..end];
            if block.len() == 1 {
                beta[block[0]] = b[start];
            } else {
                match self.rule {
                    TieRule::Index => {
                        for (k, &i) in block.iter().enumerate() {
                            beta[i] = b[start + k];
                        }
                    }
                    TieRule::ReverseIndex => {
                        let len = block.len();
                        for (k, &i) in block.iter().enumerate() {
                            beta[i] = b[start + len - 1 - k];
                        }
                    }
                    TieRule::BlockAverage => {
                        let mean = b[start..end].iter().sum::<f64>() / block.len() as f64;
                        for &i in block.iter() {
                            beta[i] = mean;
                        }
                    }
                    TieRule::RandomShuffle => {
                        block.shuffle(&mut self.shuffle);
                        for (k, &i) in block.iter().enumerate() {
                            beta[i] = b[start + k];
                        }
                    }
                }
            }
            start = end;
        }
    }
}

/// Numerical solution on the uniform grid `t_k = k·dt`.
#[derive(Debug, Clone, Serialize)]
pub struct SdePath {
    pub dt: f64,
    pub reflected: bool,
    pub tie_rule: TieRule,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `states[k]` is the state at `t_k`.
    pub states: Vec<Vec<f64>>,
    pub local_times: Vec<Vec<f64>>,
    /// `drifts[k]` is the drift used on step `k` (from `t_k` to `t_{k+1}`).
    pub drifts: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

impl SdePath {
    pub fn steps(&self) -> usize {
        self.drifts.len()
    }
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("path has at least one state")
    }
    pub fn terminal_local_time(&self) -> &[f64] {
        self.local_times.last().expect("path has at least one state")
    }

    /// CSV with one row per (grid point, coordinate): `t,i,X,L,beta`.
    /// `beta` is blank at the final grid point.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "i", "X", "L", "beta"])?;
        for k in 0..self.times.len() {
            for i in 0..self.dim() {
                let beta = self.drifts.get(k).map(|d| d[i].to_string()).unwrap_or_default();
                w.write_record(&[
                    self.times[k].to_string(),
                    (i + 1).to_string(),
                    self.states[k][i].to_string(),
                    self.local_times[k][i].to_string(),
                    beta,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_sidecar(&self, dp: &DiffusionParams, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            params: &'a DiffusionParams,
            dt: f64,
            steps: usize,
            seed: u64,
            reflected: bool,
            tie_rule: TieRule,
        }
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(
            &mut f,
            &Sidecar {
                params: dp,
                dt: self.dt,
                steps: self.steps(),
                seed: self.seed,
                reflected: self.reflected,
                tie_rule: self.tie_rule,
            },
        )?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Number of steps of size `dt` covering `[0, horizon]`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("T", "must be positive and finite"));
    }
    if !(dt > 0.0 && dt <= horizon) {
        return Err(Error::invalid("dt", "must lie in (0, T]"));
    }
    let steps = (horizon / dt).round();
    if ((steps * dt) - horizon).abs() > 1e-9 * horizon {
        return Err(Error::invalid("dt", "must divide T"));
    }
    Ok(steps as usize)
}

/// Brownian increments `ΔB[k][i] ~ N(0, dt)`, one generator stream per coordinate.
pub fn brownian_increments(seed: u64, dim: usize, steps: usize, dt: f64) -> Vec<Vec<f64>> {
    let scale = dt.sqrt();
    let mut out = vec![vec![0.0; dim]; steps];
    for i in 0..dim {
        let mut rng = stream_rng(seed, Stream::SdeNoise(i));
        for row in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            row[i] = scale * z;
        }
    }
    out
}

fn validate_run(dp: &DiffusionParams, x0: &[f64], reflected: bool) -> Result<()> {
    dp.validate()?;
    check_nonincreasing(&dp.b, "b")?;
    if x0.len() != dp.dim() {
        return Err(Error::invalid("x0", format!("expected {} entries", dp.dim())));
    }
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("x0[{i}]"), "non-finite entry"));
    }
    if reflected {
        if let Some(i) = x0.iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(
                format!("x0[{i}]"),
                "reflected runs need a nonnegative start",
            ));
        }
    }
    Ok(())
}

/// Integrate from `x0` driven by the given increments.
///
/// Each step sets `beta` from the current state under `tie_rule`, proposes
/// `X + σ⊙ΔB + (m + beta)dt`, and in reflected mode projects each
/// coordinate onto `[0, ∞)`, adding the pushing to `L`.
pub fn integrate_driven(
    dp: &DiffusionParams,
    dt: f64,
    seed: u64,
    reflected: bool,
    tie_rule: TieRule,
    x0: &[f64],
    noise: Vec<Vec<f64>>,
) -> Result<SdePath> {
    validate_run(dp, x0, reflected)?;
    let dim = dp.dim();
    if noise.iter().any(|row| row.len() != dim) {
        return Err(Error::invalid(
            "noise",
            format!("every increment row needs {dim} entries"),
        ));
    }
    let steps = noise.len();
    let mut selector = DriftSelector::new(tie_rule, dim, seed);
    let mut states = Vec::with_capacity(steps + 1);
    let mut local_times = Vec::with_capacity(steps + 1);
    let mut drifts = Vec::with_capacity(steps);
    let mut x = x0.to_vec();
    let mut l = vec![0.0; dim];
    states.push(x.clone());
    local_times.push(l.clone());
    let mut beta = vec![0.0; dim];
    for row in &noise {
        selector.select(&x, &dp.b, &mut beta);
        for i in 0..dim {
            let increment = dp.sigma[i] * row[i] + (dp.m[i] + beta[i]) * dt;
            if reflected {
                let (next, push) = reflect_step(x[i], increment);
                x[i] = next;
                l[i] += push;
            } else {
                x[i] += increment;
            }
        }
        drifts.push(beta.clone());
        states.push(x.clone());
        local_times.push(l.clone());
    }
    Ok(SdePath {
        dt,
        reflected,
        tie_rule,
        seed,
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        states,
        local_times,
        drifts,
        noise,
    })
}

/// Integrate on `[0, horizon]` with step `dt`, noise drawn from `seed`.
pub fn integrate(
    dp: &DiffusionParams,
    horizon: f64,
    dt: f64,
    seed: u64,
    reflected: bool,
    tie_rule: TieRule,
    x0: &[f64],
) -> Result<SdePath> {
    validate_run(dp, x0, reflected)?;
    let steps = step_count(horizon, dt)?;
    let noise = brownian_increments(seed, dp.dim(), steps, dt);
    integrate_driven(dp, dt, seed, reflected, tie_rule, x0, noise)
}

/// Two integrations sharing every Brownian increment but using different
/// tie rules. Returns both paths and `max_k ‖X^a(t_k) − X^b(t_k)‖₂`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_coupled(
    dp: &DiffusionParams,
    horizon: f64,
    dt: f64,
    seed: u64,
    reflected: bool,
    rule_a: TieRule,
    rule_b: TieRule,
    x0: &[f64],
) -> Result<(SdePath, SdePath, f64)> {
    validate_run(dp, x0, reflected)?;
    let steps = step_count(horizon, dt)?;
    let noise = brownian_increments(seed, dp.dim(), steps, dt);
    let a = integrate_driven(dp, dt, seed, reflected, rule_a, x0, noise.clone())?;
    let b = integrate_driven(dp, dt, seed, reflected, rule_b, x0, noise)?;
    let gap = sup_gap(&a, &b);
    Ok((a, b, gap))
}

pub fn sup_gap(a: &SdePath, b: &SdePath) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Time two coordinates of a path spend within `eps` of each other.
pub trait TieOccupation {
    fn occupation_near_tie(&self, i: usize, j: usize, eps: f64) -> Result<f64>;
}

fn check_pair(i: usize, j: usize, dim: usize, eps: f64) -> Result<()> {
    if i == j {
        return Err(Error::invalid("j", "must differ from i"));
    }
    if i >= dim || j >= dim {
        return Err(Error::invalid("i/j", format!("index out of range for dimension {dim}")));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", "must be positive"));
    }
    Ok(())
}

impl TieOccupation for SdePath {
    /// Left-endpoint sum: `dt · #{k < steps : |X_i(t_k) − X_j(t_k)| <= eps}`.
    fn occupation_near_tie(&self, i: usize, j: usize, eps: f64) -> Result<f64> {
        check_pair(i, j, self.dim(), eps)?;
        let hits = self.states[..self.steps()]
            .iter()
            .filter(|s| (s[i] - s[j]).abs() <= eps)
            .count();
        Ok(hits as f64 * self.dt)
    }
}

impl TieOccupation for ScaledPath {
    /// Exact for the piecewise-constant scaled queue lengths.
    fn occupation_near_tie(&self, i: usize, j: usize, eps: f64) -> Result<f64> {
        check_pair(i, j, self.servers(), eps)?;
        let mut total = 0.0;
        for k in 0..self.grid.len().saturating_sub(1) {
            if (self.x_scaled[i][k] - self.x_scaled[j][k]).abs() <= eps {
                total += self.grid[k + 1] - self.grid[k];
            }
        }
        Ok(total)
    }
}

pub fn occupation_near_tie<P: TieOccupation>(path: &P, i: usize, j: usize, eps: f64) -> Result<f64> {
    path.occupation_near_tie(i, j, eps)
}

/// Exact Lebesgue measure of `{t : |a(t) − b(t)| <= eps}` for two
/// continuous piecewise-linear paths on the grid `t`.
pub fn occupation_piecewise_linear(t: &[f64], a: &[f64], b: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..t.len().saturating_sub(1) {
        let (d0, d1) = (a[k] - b[k], a[k + 1] - b[k + 1]);
        let len = t[k + 1] - t[k];
        if d0 == d1 {
            if d0.abs() <= eps {
                total += len;
            }
            continue;
        }
        // d(s) = d0 + (d1 - d0) s on s in [0,1]; measure of |d| <= eps.
        let (lo, hi) = ((-eps - d0) / (d1 - d0), (eps - d0) / (d1 - d0));
        let (lo, hi) = if lo < hi { (lo, hi) } else { (hi, lo) };
        total += (hi.min(1.0) - lo.max(0.0)).max(0.0) * len;
    }
    total
}
