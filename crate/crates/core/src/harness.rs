//! Experiment configuration and drivers.
//!
//! A run is a pure function of its configuration: every replication seed
//! is derived from the master seed and the replication index, and results
//! are collected in index order, so the worker count never changes output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    diffusion_params, poc_probabilities, DiffusionParams, InitialSpec, ModelParams, Regime, ResidualRule,
};
use crate::queue::{scaled_path, simulate, simulate_terminal, ScaledTerminal};
use crate::reflect::skorokhod_map_cadlag;
use crate::rng::replication_seed;
use crate::sde::{integrate, integrate_coupled, step_count, SdePath, TieOccupation, TieRule};
use crate::service::ServiceLaw;
use crate::stats::{idle_fraction_terminal, ks_statistic, median, ranked_marginals, write_reports, Report};

/// Seed families keep queue, diffusion and coupled replications independent.
const QUEUE_FAMILY: u64 = 1;
const SDE_FAMILY: u64 = 2;
const COUPLED_FAMILY: u64 = 3;

pub fn family_seed(master: u64, family: u64, index: u64) -> u64 {
    replication_seed(replication_seed(master, family), index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Queue,
    Sde,
    Convergence,
    Uniqueness,
    Occupation,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Routing {
    PowerOfChoice { ell: usize, replacement: bool },
    Explicit { p: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSection {
    #[serde(flatten)]
    pub regime: Regime,
    #[serde(default)]
    pub x0: Vec<f64>,
    #[serde(default = "fresh")]
    pub residual: ResidualRule,
}

fn fresh() -> ResidualRule {
    ResidualRule::Fresh
}

/// Prelimit model, independent of the scaling parameter `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub lambda_hat: Vec<f64>,
    pub lambda0: f64,
    /// Defaults to `lambda` (critical load).
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub mu_hat: Vec<f64>,
    pub service: OneOrMany<ServiceLaw>,
    pub routing: Routing,
    pub initial: InitialSection,
}

impl ModelSection {
    /// Fill every defaulted field explicitly.
    pub fn normalized(&self) -> ModelSection {
        let k = self.lambda.len();
        let or_zeros = |v: &Vec<f64>| if v.is_empty() { vec![0.0; k] } else { v.clone() };
        ModelSection {
            lambda: self.lambda.clone(),
            lambda_hat: or_zeros(&self.lambda_hat),
            lambda0: self.lambda0,
            mu: if self.mu.is_empty() {
                self.lambda.clone()
            } else {
                self.mu.clone()
            },
            mu_hat: or_zeros(&self.mu_hat),
            service: OneOrMany::Many(match &self.service {
                OneOrMany::One(law) => vec![law.clone(); k],
                OneOrMany::Many(v) => v.clone(),
            }),
            routing: self.routing.clone(),
            initial: InitialSection {
                regime: self.initial.regime.clone(),
                x0: or_zeros(&self.initial.x0),
                residual: self.initial.residual.clone(),
            },
        }
    }

    /// Parameters of the `n`-th system.
    pub fn params(&self, n: u64) -> Result<ModelParams> {
        let s = self.normalized();
        let p = match &s.routing {
            Routing::PowerOfChoice { ell, replacement } => {
                poc_probabilities(s.lambda.len(), *ell, *replacement).map_err(|e| prefix(e, "model.routing"))?
            }
            Routing::Explicit { p } => p.clone(),
        };
        let mp = ModelParams {
            n,
            lambda: s.lambda,
            lambda_hat: s.lambda_hat,
            lambda0: s.lambda0,
            mu: s.mu,
            mu_hat: s.mu_hat,
            p,
            service: match s.service {
                OneOrMany::Many(v) => v,
                OneOrMany::One(_) => unreachable!("normalized"),
            },
            ic: InitialSpec {
                regime: s.initial.regime,
                x0: s.initial.x0,
                residual: s.initial.residual,
            },
        };
        mp.validate().map_err(|e| prefix(e, "model"))?;
        Ok(mp)
    }
}

fn prefix(e: Error, at: &str) -> Error {
    match e {
        Error::InvalidInput { field, reason } => Error::InvalidInput {
            field: format!("{at}.{field}"),
            reason,
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub b: Vec<f64>,
    #[serde(default)]
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    /// Defaults to reflected unless the model is in the IC_α regime.
    #[serde(default)]
    pub reflected: Option<bool>,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default = "default_coupled_rules")]
    pub coupled_rules: [TieRule; 2],
    #[serde(default = "default_eps_ladder")]
    pub eps_ladder: Vec<f64>,
    /// 1-based pair for the occupation estimator.
    #[serde(default = "default_pair")]
    pub pair: [usize; 2],
}

impl Default for SdeSection {
    fn default() -> Self {
        SdeSection {
            reflected: None,
            tie_rule: TieRule::default(),
            coupled_rules: default_coupled_rules(),
            eps_ladder: default_eps_ladder(),
            pair: default_pair(),
        }
    }
}

fn default_coupled_rules() -> [TieRule; 2] {
    [TieRule::Index, TieRule::BlockAverage]
}
fn default_eps_ladder() -> Vec<f64> {
    vec![0.1, 0.03, 0.01, 0.003]
}
fn default_pair() -> [usize; 2] {
    [1, 2]
}

/// Pass/fail thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default = "default_ks")]
    pub ks: f64,
    #[serde(default = "default_idle")]
    pub idle_fraction: f64,
    #[serde(default = "default_gap")]
    pub coupled_gap: f64,
    /// Occupation bound at the smallest eps, as a fraction of the horizon.
    #[serde(default = "default_occupation")]
    pub occupation: f64,
    #[serde(default = "default_identity")]
    pub identity_tol: f64,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            ks: default_ks(),
            idle_fraction: default_idle(),
            coupled_gap: default_gap(),
            occupation: default_occupation(),
            identity_tol: default_identity(),
        }
    }
}

fn default_ks() -> f64 {
    0.061
}
fn default_idle() -> f64 {
    0.05
}
fn default_gap() -> f64 {
    0.05
}
fn default_occupation() -> f64 {
    0.01
}
fn default_identity() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replications: u64,
    pub horizon: f64,
    #[serde(default)]
    pub n_ladder: Vec<u64>,
    #[serde(default)]
    pub dt_ladder: Vec<f64>,
    /// Output directory; the CLI flag takes precedence. Not recorded in the manifest.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub diffusion: Option<DiffusionSection>,
    #[serde(default)]
    pub sde: SdeSection,
    #[serde(default)]
    pub checks: Checks,
}

/// Failure classes of the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Validation(Error),
    #[error("run failed: {0}")]
    Runtime(Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse(_) => 2,
            HarnessError::Validation(_) => 3,
            HarnessError::Runtime(_) => 1,
        }
    }
}

pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, HarnessError> {
    toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
}

/// Parse a standalone `[model]` table (the body, without the header).
pub fn parse_model(text: &str) -> std::result::Result<ModelSection, HarnessError> {
    toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
}

pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn invalid(field: &str, reason: &str) -> Error {
    Error::invalid(field, reason)
}

impl ExperimentConfig {
    /// Resolved copy with every default spelled out.
    pub fn normalized(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.model = c.model.as_ref().map(ModelSection::normalized);
        if let Some(d) = c.diffusion.as_mut() {
            let k = d.b.len();
            if d.m.is_empty() {
                d.m = vec![0.0; k];
            }
            if d.x0.is_empty() {
                d.x0 = vec![0.0; k];
            }
        }
        if c.sde.reflected.is_none() {
            c.sde.reflected = Some(self.default_reflected());
        }
        c
    }

    fn default_reflected(&self) -> bool {
        !matches!(
            self.model.as_ref().map(|m| &m.initial.regime),
            Some(Regime::IcAlpha { .. })
        )
    }

    pub fn reflected(&self) -> bool {
        self.sde.reflected.unwrap_or_else(|| self.default_reflected())
    }

    /// Model parameters for each entry of the `n` ladder.
    pub fn models(&self) -> Result<Vec<ModelParams>> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| invalid("model", "this experiment needs a [model] section"))?;
        self.n_ladder.iter().map(|&n| model.params(n)).collect()
    }

    /// Diffusion data: the explicit section, else derived from the model.
    pub fn diffusion(&self) -> Result<DiffusionParams> {
        if let Some(d) = &self.diffusion {
            let k = d.b.len();
            let or_zeros = |v: &Vec<f64>| if v.is_empty() { vec![0.0; k] } else { v.clone() };
            let dp = DiffusionParams {
                b: d.b.clone(),
                m: or_zeros(&d.m),
                sigma: d.sigma.clone(),
                x0: or_zeros(&d.x0),
            };
            dp.validate().map_err(|e| prefix(e, "diffusion"))?;
            return Ok(dp);
        }
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| invalid("diffusion", "needs a [diffusion] or [model] section"))?;
        diffusion_params(&model.params(1)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("replications", "must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        if self.n_ladder.windows(2).any(|w| w[1] <= w[0]) || self.n_ladder.contains(&0) {
            return Err(invalid("n_ladder", "must be positive and strictly increasing"));
        }
        if self.dt_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("dt_ladder", "must be strictly decreasing (increasingly fine)"));
        }
        for (k, &dt) in self.dt_ladder.iter().enumerate() {
            step_count(self.horizon, dt).map_err(|e| match e {
                Error::InvalidInput { reason, .. } => invalid(&format!("dt_ladder[{k}]"), &reason),
                other => other,
            })?;
        }
        let needs_n = matches!(
            self.kind,
            ExperimentKind::Queue | ExperimentKind::Convergence | ExperimentKind::Idle
        );
        let needs_dt = matches!(
            self.kind,
            ExperimentKind::Sde | ExperimentKind::Convergence | ExperimentKind::Uniqueness | ExperimentKind::Occupation
        );
        if needs_n && self.n_ladder.is_empty() {
            return Err(invalid("n_ladder", "must be nonempty for this experiment"));
        }
        if needs_dt && self.dt_ladder.is_empty() {
            return Err(invalid("dt_ladder", "must be nonempty for this experiment"));
        }
        if needs_n {
            self.models()?;
        }
        if self.kind == ExperimentKind::Idle
            && !self
                .models()?
                .iter()
                .all(|m| matches!(m.ic.regime, Regime::IcAlpha { .. }))
        {
            return Err(invalid(
                "model.initial.regime",
                "idle experiments use the ic-alpha regime",
            ));
        }
        if needs_dt {
            let dp = self.diffusion()?;
            if self.reflected() && dp.x0.iter().any(|&v| v < 0.0) {
                return Err(invalid("diffusion.x0", "reflected runs need a nonnegative start"));
            }
            if self.kind == ExperimentKind::Occupation {
                let [i, j] = self.sde.pair;
                if i == j || i == 0 || j == 0 || i > dp.dim() || j > dp.dim() {
                    return Err(invalid("sde.pair", "needs two distinct 1-based coordinates"));
                }
                if self.sde.eps_ladder.is_empty() || self.sde.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(invalid("sde.eps_ladder", "must be nonempty and strictly decreasing"));
                }
            }
        }
        if !(self.checks.ks > 0.0) {
            return Err(invalid("checks.ks", "must be positive"));
        }
        Ok(())
    }
}

fn seeds(master: u64, family: u64, reps: u64) -> Vec<u64> {
    (0..reps).map(|k| family_seed(master, family, k)).collect()
}

/// Terminal scaled values of `reps` independent queue runs.
pub fn queue_terminal_samples(mp: &ModelParams, horizon: f64, reps: u64, master: u64) -> Result<Vec<ScaledTerminal>> {
    seeds(master, QUEUE_FAMILY, reps)
        .into_par_iter()
        .map(|seed| Ok(simulate_terminal(mp, horizon, seed)?.scaled(mp)))
        .collect()
}

/// Terminal `(X(T), L(T))` of `reps` independent SDE runs.
#[allow(clippy::too_many_arguments)]
pub fn sde_terminal_samples(
    dp: &DiffusionParams,
    horizon: f64,
    dt: f64,
    reps: u64,
    master: u64,
    reflected: bool,
    rule: TieRule,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    seeds(master, SDE_FAMILY, reps)
        .into_par_iter()
        .map(|seed| {
            let path = integrate(dp, horizon, dt, seed, reflected, rule, &dp.x0)?;
            Ok((path.terminal().to_vec(), path.terminal_local_time().to_vec()))
        })
        .collect()
}

/// Per-rank KS reports comparing two collections of vectors.
pub fn ranked_ks_reports(name: &str, a: &[Vec<f64>], b: &[Vec<f64>], threshold: f64) -> Result<Vec<Report>> {
    let ra = ranked_marginals(a, name)?;
    let rb = ranked_marginals(b, name)?;
    ra.iter()
        .zip(&rb)
        .enumerate()
        .map(|(r, (x, y))| {
            Ok(
                Report::at_most(format!("{name}/rank{}", r + 1), ks_statistic(x, y)?, threshold)
                    .sizes(vec![a.len(), b.len()]),
            )
        })
        .collect()
}

/// Median over seeds of the coupled sup-gap, one entry per step size.
#[allow(clippy::too_many_arguments)]
pub fn coupled_median_gaps(
    dp: &DiffusionParams,
    horizon: f64,
    dt_ladder: &[f64],
    reps: u64,
    master: u64,
    reflected: bool,
    rules: [TieRule; 2],
) -> Result<Vec<(f64, Vec<f64>)>> {
    let seeds = seeds(master, COUPLED_FAMILY, reps);
    dt_ladder
        .iter()
        .map(|&dt| {
            let gaps: Vec<f64> = seeds
                .par_iter()
                .map(|&seed| {
                    integrate_coupled(dp, horizon, dt, seed, reflected, rules[0], rules[1], &dp.x0).map(|r| r.2)
                })
                .collect::<Result<_>>()?;
            Ok((median(&gaps), gaps))
        })
        .collect()
}

/// Mean over seeds of the near-tie occupation of a coordinate pair, per eps.
#[allow(clippy::too_many_arguments)]
pub fn mean_occupation(
    dp: &DiffusionParams,
    horizon: f64,
    dt: f64,
    reps: u64,
    master: u64,
    reflected: bool,
    rule: TieRule,
    pair: (usize, usize),
    eps_ladder: &[f64],
) -> Result<Vec<f64>> {
    let per_run: Vec<Vec<f64>> = seeds(master, SDE_FAMILY, reps)
        .into_par_iter()
        .map(|seed| {
            let path = integrate(dp, horizon, dt, seed, reflected, rule, &dp.x0)?;
            eps_ladder
                .iter()
                .map(|&eps| path.occupation_near_tie(pair.0, pair.1, eps))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..eps_ladder.len())
        .map(|k| per_run.iter().map(|r| r[k]).sum::<f64>() / reps as f64)
        .collect())
}

/// Largest violation of the Skorokhod identity `Γ(Û_i) = (X̂_i, L̂_i)` over a
/// logged IC₀ run, together with the exact balance check.
pub fn queue_identity_error(mp: &ModelParams, horizon: f64, seed: u64) -> Result<(f64, bool)> {
    let log = simulate(mp, horizon, seed)?;
    let path = scaled_path(&log, mp, &mp.ic.regime)?;
    let mut worst = 0.0_f64;
    for i in 0..mp.servers() {
        let refl = skorokhod_map_cadlag(&path.grid, &path.u_left[i], &path.u[i])?;
        for k in 0..path.grid.len() {
            worst = worst
                .max((refl.x[k] - path.x_scaled[i][k]).abs())
                .max((refl.z[k] - path.l_hat[i][k]).abs());
        }
    }
    let n = mp.servers();
    let balanced = (0..log.len()).all(|k| {
        (0..n).all(|i| {
            let at = k * n + i;
            log.initial.x0_minus[i] + log.e[at] + log.a[at] == log.x[at] + log.d[at]
        }) && (0..n).map(|i| log.a[k * n + i]).sum::<u64>() == log.a0[k]
    });
    Ok((worst, balanced))
}

/// Everything a run produced.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub reports: Vec<Report>,
    pub files: Vec<PathBuf>,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", parts.join(", "))
}

/// `b`, `m`, `σ` of the limit equation as TOML lines.
pub fn derive_text(config: &ExperimentConfig) -> Result<String> {
    let model = config
        .model
        .as_ref()
        .ok_or_else(|| invalid("model", "derive needs a [model] section"))?;
    let dp = diffusion_params(&model.params(config.n_ladder.first().copied().unwrap_or(1))?)?;
    let mut out = String::new();
    writeln!(out, "b = {}", fmt_vec(&dp.b)).unwrap();
    writeln!(out, "m = {}", fmt_vec(&dp.m)).unwrap();
    writeln!(out, "sigma = {}", fmt_vec(&dp.sigma)).unwrap();
    Ok(out)
}

fn write_terminal_csv(path: &Path, header: &[&str], rows: &[Vec<f64>], seeds: &[u64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut h = vec!["replication".to_string(), "seed".to_string()];
    h.extend(header.iter().map(|s| s.to_string()));
    w.write_record(&h)?;
    for (k, row) in rows.iter().enumerate() {
        let mut rec = vec![k.to_string(), seeds[k].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Execute the experiment described by `config`, writing artifacts under `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> std::result::Result<RunOutput, HarnessError> {
    config.validate().map_err(HarnessError::Validation)?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::Runtime(e.into()))?;
    let mut output = execute(config, out).map_err(HarnessError::Runtime)?;
    let manifest = out.join("manifest.toml");
    let text = toml::to_string(&config.normalized())
        .map_err(|e| HarnessError::Runtime(Error::invalid("manifest", e.to_string())))?;
    std::fs::write(&manifest, text).map_err(|e| HarnessError::Runtime(e.into()))?;
    let reports = out.join("reports.json");
    write_reports(&output.reports, &reports).map_err(HarnessError::Runtime)?;
    output.files.push(reports);
    output.files.push(manifest);
    Ok(output)
}

fn execute(c: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    let mut o = RunOutput::default();
    let reps = c.replications;
    match c.kind {
        ExperimentKind::Queue => {
            for mp in c.models()? {
                for (k, seed) in seeds(c.seed, QUEUE_FAMILY, reps).into_iter().enumerate() {
                    let log = simulate(&mp, c.horizon, seed)?;
                    let path = scaled_path(&log, &mp, &mp.ic.regime)?;
                    let stem = format!("queue_n{}_rep{k}", mp.n);
                    let files = [
                        out.join(format!("{stem}.csv")),
                        out.join(format!("{stem}_events.csv")),
                        out.join(format!("{stem}.json")),
                    ];
                    path.write_csv(&files[0])?;
                    log.write_csv(&files[1])?;
                    crate::queue::write_sidecar(&log, &files[2])?;
                    o.files.extend(files);
                    if mp.ic.regime == Regime::Ic0 {
                        let (err, balanced) = queue_identity_error(&mp, c.horizon, seed)?;
                        o.reports.push(
                            Report::at_most(format!("{stem}/skorokhod-identity"), err, c.checks.identity_tol)
                                .seeds(vec![seed]),
                        );
                        o.reports.push(
                            Report::at_most(format!("{stem}/balance"), if balanced { 0.0 } else { 1.0 }, 0.0)
                                .seeds(vec![seed]),
                        );
                    }
                }
            }
        }
        ExperimentKind::Sde => {
            let dp = c.diffusion()?;
            let tol = crate::model::default_hull_tol(&dp.b);
            for &dt in &c.dt_ladder {
                for (k, seed) in seeds(c.seed, SDE_FAMILY, reps).into_iter().enumerate() {
                    let path = integrate(&dp, c.horizon, dt, seed, c.reflected(), c.sde.tie_rule, &dp.x0)?;
                    let stem = format!("sde_dt{dt:e}_rep{k}");
                    let files = [out.join(format!("{stem}.csv")), out.join(format!("{stem}.json"))];
                    path.write_csv(&files[0])?;
                    path.write_sidecar(&dp, &files[1])?;
                    o.files.extend(files);
                    o.reports.push(
                        Report::at_most(
                            format!("{stem}/hull-violations"),
                            hull_violations(&path, &dp.b, tol)? as f64,
                            0.0,
                        )
                        .seeds(vec![seed]),
                    );
                }
            }
        }
        ExperimentKind::Convergence => {
            let dp = c.diffusion()?;
            let dt = *c.dt_ladder.last().expect("validated");
            let sde_seeds = seeds(c.seed, SDE_FAMILY, reps);
            let sde = sde_terminal_samples(&dp, c.horizon, dt, reps, c.seed, c.reflected(), c.sde.tie_rule)?;
            let sde_x: Vec<Vec<f64>> = sde.iter().map(|s| s.0.clone()).collect();
            let sde_l: Vec<Vec<f64>> = sde.iter().map(|s| s.1.clone()).collect();
            let k = dp.dim();
            let sde_file = out.join(format!("terminal_sde_dt{dt:e}.csv"));
            let rows: Vec<Vec<f64>> = sde.iter().map(|(x, l)| x.iter().chain(l).copied().collect()).collect();
            let header: Vec<String> = columns("x", k).into_iter().chain(columns("l", k)).collect();
            write_terminal_csv(
                &sde_file,
                &header.iter().map(String::as_str).collect::<Vec<_>>(),
                &rows,
                &sde_seeds,
            )?;
            o.files.push(sde_file);
            for mp in c.models()? {
                let q = queue_terminal_samples(&mp, c.horizon, reps, c.seed)?;
                let qx: Vec<Vec<f64>> = q.iter().map(|s| s.x.clone()).collect();
                let ql: Vec<Vec<f64>> = q.iter().map(|s| s.l_hat.clone()).collect();
                let file = out.join(format!("terminal_queue_n{}.csv", mp.n));
                let rows: Vec<Vec<f64>> = q
                    .iter()
                    .map(|s| s.x.iter().chain(&s.l_hat).copied().collect())
                    .collect();
                write_terminal_csv(
                    &file,
                    &header.iter().map(String::as_str).collect::<Vec<_>>(),
                    &rows,
                    &seeds(c.seed, QUEUE_FAMILY, reps),
                )?;
                o.files.push(file);
                let tag = format!("n{}", mp.n);
                o.reports
                    .extend(ranked_ks_reports(&format!("{tag}/ks-x"), &qx, &sde_x, c.checks.ks)?);
                if c.reflected() {
                    o.reports
                        .extend(ranked_ks_reports(&format!("{tag}/ks-l"), &ql, &sde_l, c.checks.ks)?);
                } else {
                    o.reports.push(
                        Report::at_most(
                            format!("{tag}/idle-fraction"),
                            idle_fraction_terminal(&ql)?,
                            c.checks.idle_fraction,
                        )
                        .sizes(vec![ql.len()]),
                    );
                }
            }
        }
        ExperimentKind::Uniqueness => {
            let dp = c.diffusion()?;
            let ladder = coupled_median_gaps(
                &dp,
                c.horizon,
                &c.dt_ladder,
                reps,
                c.seed,
                c.reflected(),
                c.sde.coupled_rules,
            )?;
            let file = out.join("coupled_gaps.csv");
            let mut w = csv::Writer::from_path(&file)?;
            w.write_record(["dt", "replication", "seed", "gap"])?;
            let s = seeds(c.seed, COUPLED_FAMILY, reps);
            for (dt, (_, gaps)) in c.dt_ladder.iter().zip(&ladder) {
                for (k, g) in gaps.iter().enumerate() {
                    w.write_record(&[dt.to_string(), k.to_string(), s[k].to_string(), g.to_string()])?;
                }
            }
            w.flush()?;
            o.files.push(file);
            for (k, (dt, (med, _))) in c.dt_ladder.iter().zip(&ladder).enumerate() {
                // Each refinement must strictly shrink the median gap.
                let bound = if k == 0 { f64::INFINITY } else { ladder[k - 1].0 };
                let mut r = Report::at_most(format!("median-gap/dt{dt:e}"), *med, bound).sizes(vec![reps as usize]);
                r.pass = k == 0 || *med < bound;
                o.reports.push(r);
            }
            let (last_dt, last) = (c.dt_ladder.last().unwrap(), ladder.last().unwrap().0);
            o.reports.push(Report::at_most(
                format!("median-gap-bound/dt{last_dt:e}"),
                last,
                c.checks.coupled_gap,
            ));
        }
        ExperimentKind::Occupation => {
            let dp = c.diffusion()?;
            let dt = *c.dt_ladder.last().expect("validated");
            let [i, j] = c.sde.pair;
            let means = mean_occupation(
                &dp,
                c.horizon,
                dt,
                reps,
                c.seed,
                c.reflected(),
                c.sde.tie_rule,
                (i - 1, j - 1),
                &c.sde.eps_ladder,
            )?;
            let file = out.join("occupation.csv");
            let mut w = csv::Writer::from_path(&file)?;
            w.write_record(["eps", "mean_occupation"])?;
            for (eps, m) in c.sde.eps_ladder.iter().zip(&means) {
                w.write_record(&[eps.to_string(), m.to_string()])?;
            }
            w.flush()?;
            o.files.push(file);
            for (k, (eps, m)) in c.sde.eps_ladder.iter().zip(&means).enumerate() {
                let bound = if k == 0 { f64::INFINITY } else { means[k - 1] };
                o.reports
                    .push(Report::at_most(format!("occupation/eps{eps}"), *m, bound).sizes(vec![reps as usize]));
            }
            let last = *means.last().unwrap();
            o.reports.push(Report::at_most(
                "occupation-bound",
                last,
                c.checks.occupation * c.horizon,
            ));
        }
        ExperimentKind::Idle => {
            for mp in c.models()? {
                let q = queue_terminal_samples(&mp, c.horizon, reps, c.seed)?;
                let ql: Vec<Vec<f64>> = q.iter().map(|s| s.l_hat.clone()).collect();
                o.reports.push(
                    Report::at_most(
                        format!("n{}/idle-fraction", mp.n),
                        idle_fraction_terminal(&ql)?,
                        c.checks.idle_fraction,
                    )
                    .sizes(vec![ql.len()]),
                );
            }
        }
    }
    Ok(o)
}

/// Steps whose realized drift leaves the hull at the current state.
pub fn hull_violations(path: &SdePath, b: &[f64], tol: f64) -> Result<usize> {
    let mut bad = 0;
    for k in 0..path.steps() {
        if !crate::model::in_drift_hull(&path.drifts[k], &path.states[k], b, tol)? {
            bad += 1;
        }
    }
    Ok(bad)
}
