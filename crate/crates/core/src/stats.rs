//! Sample comparison, estimators and report records.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queue::ScaledPath;

/// Replicated observations of a fixed-dimension statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub values: Vec<Vec<f64>>,
    pub label: String,
    pub meta: String,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = values.first() else {
            return Err(Error::invalid("values", "sample set is empty"));
        };
        let dim = first.len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid(
                "values",
                "all observations need the same nonzero dimension",
            ));
        }
        Ok(SampleSet {
            values,
            label: label.into(),
            meta: String::new(),
        })
    }

    pub fn scalars(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(label, values.into_iter().map(|v| vec![v]).collect())
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = meta.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn scalar_values(&self, field: &str) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::invalid(
                field,
                format!(
                    "expected scalar samples, got dimension {} (compare ranked or per-coordinate marginals)",
                    self.dim()
                ),
            ));
        }
        Ok(self.values.iter().map(|v| v[0]).collect())
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`,
/// evaluated exactly at every jump of either empirical distribution.
pub fn ks_statistic(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    let mut xs = a.scalar_values("a")?;
    let mut ys = b.scalar_values("b")?;
    if xs.iter().chain(&ys).any(|v| v.is_nan()) {
        return Err(Error::invalid("a/b", "NaN sample"));
    }
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0_f64;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        sup = sup.max((i as f64 / n - j as f64 / m).abs());
    }
    // After one sample is exhausted its ECDF is 1; the other only climbs toward 1.
    if i < xs.len() {
        sup = sup.max(1.0 - i as f64 / n);
    }
    if j < ys.len() {
        sup = sup.max(1.0 - j as f64 / m);
    }
    Ok(sup)
}

/// Asymptotic two-sample KS critical value `c(α)·√(1/m₁ + 1/m₂)` with
/// `c(α) = √(−ln(α/2)/2)`.
pub fn ks_critical_value(alpha: f64, m1: usize, m2: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * (1.0 / m1 as f64 + 1.0 / m2 as f64).sqrt()
}

/// Sort each vector ascending and split by rank: element `r` of the result
/// collects the `r`-th smallest coordinate of every observation.
pub fn ranked_marginals(vectors: &[Vec<f64>], label: &str) -> Result<Vec<SampleSet>> {
    let set = SampleSet::new(label, vectors.to_vec())?;
    let dim = set.dim();
    let mut by_rank = vec![Vec::with_capacity(vectors.len()); dim];
    for v in &set.values {
        let mut sorted = v.clone();
        sorted.sort_by(|p, q| p.partial_cmp(q).expect("comparable samples"));
        for (r, val) in sorted.into_iter().enumerate() {
            by_rank[r].push(val);
        }
    }
    by_rank
        .into_iter()
        .enumerate()
        .map(|(r, vals)| SampleSet::scalars(format!("{label}/rank{}", r + 1), vals))
        .collect()
}

/// Fraction of runs in which some server accumulated idle time by `T`.
pub fn idle_fraction(paths: &[ScaledPath], horizon: f64) -> Result<f64> {
    let terminal: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| (0..p.servers()).map(|i| p.l_hat_at(i, horizon)).collect())
        .collect();
    idle_fraction_terminal(&terminal)
}

/// As [`idle_fraction`] from the vectors `L̂(T)` of each run.
pub fn idle_fraction_terminal(l_hat: &[Vec<f64>]) -> Result<f64> {
    if l_hat.is_empty() {
        return Err(Error::invalid("paths", "no replications"));
    }
    let idle = l_hat.iter().filter(|l| l.iter().any(|&v| v > 0.0)).count();
    Ok(idle as f64 / l_hat.len() as f64)
}

/// Slack used when comparing grid spacings to `delta`.
const GRID_SLACK: f64 = 1e-12;

/// `sup {|v(t) − v(s)| : s, t <= T, |t − s| <= δ}` over grid pairs.
pub fn modulus_of_continuity(t: &[f64], v: &[f64], delta: f64, horizon: f64) -> Result<f64> {
    if t.len() != v.len() {
        return Err(Error::invalid("v", "length differs from grid"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let end = t.partition_point(|&s| s <= horizon);
    // Sliding window [lo, k] with monotone deques for max and min.
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut lo = 0;
    let mut best = 0.0_f64;
    for k in 0..end {
        while t[k] - t[lo] > delta + GRID_SLACK {
            lo += 1;
        }
        while maxq.back().is_some_and(|&q| v[q] <= v[k]) {
            maxq.pop_back();
        }
        maxq.push_back(k);
        while minq.back().is_some_and(|&q| v[q] >= v[k]) {
            minq.pop_back();
        }
        minq.push_back(k);
        while maxq.front().is_some_and(|&q| q < lo) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&q| q < lo) {
            minq.pop_front();
        }
        best = best.max(v[maxq[0]] - v[minq[0]]);
    }
    Ok(best)
}

/// Vector version with the Euclidean norm of increments.
pub fn modulus_of_continuity_vec(t: &[f64], rows: &[Vec<f64>], delta: f64, horizon: f64) -> Result<f64> {
    if t.len() != rows.len() {
        return Err(Error::invalid("rows", "length differs from grid"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let end = t.partition_point(|&s| s <= horizon);
    let mut best = 0.0_f64;
    for k in 0..end {
        for j in (0..k).rev() {
            if t[k] - t[j] > delta + GRID_SLACK {
                break;
            }
            let d = rows[k]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.max(d);
        }
    }
    Ok(best)
}

/// Sample mean and its standard error.
pub fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// One checked statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Report {
    /// Passing means `value <= threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Report {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
            sample_sizes: Vec::new(),
            seeds: Vec::new(),
        }
    }

    pub fn sizes(mut self, sizes: Vec<usize>) -> Self {
        self.sample_sizes = sizes;
        self
    }

    pub fn seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }
}

pub fn write_reports(reports: &[Report], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, reports)?;
    f.write_all(b"\n")?;
    Ok(())
}
