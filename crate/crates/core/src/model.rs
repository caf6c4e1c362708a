//! Model parameters, the rank function, routing probabilities and the
//! drift hull of the rank-based inclusion.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::service::ServiceLaw;

/// Largest dimension for which [`permissible_permutations`] enumerates.
pub const ENUMERATION_CAP: usize = 8;

/// Ranks of `x` (1-based): `rank(i) = #{j : x_j < x_i} + #{j <= i : x_j = x_i}`.
///
/// Ties go to the smaller index. Ties are detected by exact equality.
pub fn rank_vector(x: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("x[{i}]"), "non-finite entry"));
    }
    Ok(ranks_of(x))
}

/// Rank function over any totally ordered slice. Stable sort keeps index
/// order inside ties.
pub(crate) fn ranks_of<T: PartialOrd>(x: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("comparable entries"));
    let mut rank = vec![0; x.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos + 1;
    }
    rank
}

/// Maximal sets of indices sharing a value, in increasing value order.
/// Each block occupies the contiguous rank range `start..start + len`
/// (0-based `start`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TieBlock {
    pub members: Vec<usize>,
    pub start: usize,
}

pub fn tie_blocks(x: &[f64]) -> Vec<TieBlock> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite entries"));
    let mut blocks: Vec<TieBlock> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        match blocks.last_mut() {
            Some(block) if x[block.members[0]] == x[i] => block.members.push(i),
            _ => blocks.push(TieBlock {
                members: vec![i],
                start: pos,
            }),
        }
    }
    blocks
}

/// Exact power-of-choice routing probabilities.
///
/// With replacement: `p_r = ((N-r+1)/N)^ℓ - ((N-r)/N)^ℓ`.
/// Without replacement: `p_r = C(N-r, ℓ-1) / C(N, ℓ)`.
pub fn poc_probabilities_exact(servers: usize, ell: usize, with_replacement: bool) -> Result<Vec<BigRational>> {
    if servers == 0 {
        return Err(Error::invalid("N", "must be positive"));
    }
    if ell == 0 || ell > servers {
        return Err(Error::invalid("ell", format!("must lie in [1, {servers}]")));
    }
    let n = servers as u64;
    let p = (1..=n)
        .map(|r| {
            if with_replacement {
                let hi = BigInt::from(n - r + 1).pow(ell as u32);
                let lo = BigInt::from(n - r).pow(ell as u32);
                BigRational::new(hi - lo, BigInt::from(n).pow(ell as u32))
            } else {
                BigRational::new(binomial(n - r, ell as u64 - 1), binomial(n, ell as u64))
            }
        })
        .collect();
    Ok(p)
}

fn binomial(k: u64, j: u64) -> BigInt {
    if j > k {
        return BigInt::zero();
    }
    let mut acc = BigInt::one();
    for t in 0..j {
        acc = acc * BigInt::from(k - t) / BigInt::from(t + 1);
    }
    acc
}

/// Floating-point power-of-choice probabilities, correctly rounded from the
/// exact values (so monotonicity survives rounding).
pub fn poc_probabilities(servers: usize, ell: usize, with_replacement: bool) -> Result<Vec<f64>> {
    Ok(poc_probabilities_exact(servers, ell, with_replacement)?
        .iter()
        .map(|q| q.to_f64().expect("probability is finite"))
        .collect())
}

/// Enumerate `{π : x_i < x_j ⇒ π(i) < π(j)}`. Each permutation is returned
/// 1-based, `π[i] = π(i+1)`, in lexicographic order.
pub fn permissible_permutations(x: &[f64]) -> Result<Vec<Vec<usize>>> {
    if x.len() > ENUMERATION_CAP {
        return Err(Error::Capacity(format!(
            "enumerating permissible permutations is limited to N <= {ENUMERATION_CAP} (got {}); use in_drift_hull for membership",
            x.len()
        )));
    }
    rank_vector(x)?;
    let blocks = tie_blocks(x);
    let mut out = vec![vec![0usize; x.len()]];
    for block in &blocks {
        let targets: Vec<usize> = (block.start + 1..=block.start + block.members.len()).collect();
        let arrangements = permutations(&targets);
        out = out
            .into_iter()
            .flat_map(|partial| {
                arrangements.iter().map(move |arr| {
                    let mut next = partial.clone();
                    for (&i, &r) in block.members.iter().zip(arr) {
                        next[i] = r;
                    }
                    next
                })
            })
            .collect();
    }
    out.sort();
    Ok(out)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Default membership tolerance, `1e-9 * (1 + max|b|)`.
pub fn default_hull_tol(b: &[f64]) -> f64 {
    1e-9 * (1.0 + b.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

pub(crate) fn check_nonincreasing(b: &[f64], field: &str) -> Result<()> {
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{field}[{i}]"), "non-finite entry"));
    }
    if let Some(k) = b.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::invalid(
            field,
            format!("must be nonincreasing (entry {} exceeds entry {})", k + 1, k),
        ));
    }
    Ok(())
}

/// Whether `beta` lies in `conv{b_π : π ∈ 𝔓(x)}` up to `tol`.
///
/// The hull factors over the tie-blocks of `x`: on a block occupying ranks
/// `s..s+k`, `beta` restricted to the block must lie in the permutohedron of
/// `b[s..s+k]`, i.e. be majorized by it.
pub fn in_drift_hull(beta: &[f64], x: &[f64], b: &[f64], tol: f64) -> Result<bool> {
    let n = b.len();
    if beta.len() != n || x.len() != n {
        return Err(Error::invalid("beta/x", format!("length must equal len(b) = {n}")));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid("tol", "must be nonnegative"));
    }
    check_nonincreasing(b, "b")?;
    rank_vector(x)?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("beta", "non-finite entry"));
    }
    for block in tie_blocks(x) {
        let k = block.members.len();
        let mut sub: Vec<f64> = block.members.iter().map(|&i| beta[i]).collect();
        sub.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let target = &b[block.start..block.start + k];
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for j in 0..k {
            lhs += sub[j];
            rhs += target[j];
            if lhs > rhs + tol {
                return Ok(false);
            }
        }
        if (lhs - rhs).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Initial-condition regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "kebab-case")]
pub enum Regime {
    /// Queue lengths of order √n; `x0` is the limit of `n^{-1/2} X(0-)`.
    Ic0,
    /// Queue lengths centred at `α_n = n^alpha_exponent`; `x0` is the limit
    /// of `n^{-1/2}(X(0-) - α_n)`.
    IcAlpha {
        #[serde(default = "default_alpha_exponent")]
        alpha_exponent: f64,
    },
}

fn default_alpha_exponent() -> f64 {
    0.75
}

impl Regime {
    pub fn ic_alpha() -> Self {
        Regime::IcAlpha {
            alpha_exponent: default_alpha_exponent(),
        }
    }
}

/// How the residual service time of a nonempty queue's head-of-line job is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResidualRule {
    /// A fresh draw from the scaled service law (order 1/n).
    Fresh,
    /// Explicit residuals, one per server; entries for empty queues are ignored.
    Fixed { z0: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    #[serde(flatten)]
    pub regime: Regime,
    /// Scaled initial queue values, one per server.
    pub x0: Vec<f64>,
    pub residual: ResidualRule,
}

/// All parameters of the `n`-th prelimit system.
///
/// Rates of the `n`-th system: dedicated arrivals `nλ_i + √n λ̂_i`, load
/// balancing stream `√n λ₀`, service `nμ_i + √n μ̂_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u64,
    pub lambda: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub lambda0: f64,
    pub mu: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub p: Vec<f64>,
    pub service: Vec<ServiceLaw>,
    pub ic: InitialSpec,
}

impl ModelParams {
    pub fn servers(&self) -> usize {
        self.lambda.len()
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn arrival_rate(&self, i: usize) -> f64 {
        self.n as f64 * self.lambda[i] + self.sqrt_n() * self.lambda_hat[i]
    }

    pub fn lbs_rate(&self) -> f64 {
        self.sqrt_n() * self.lambda0
    }

    pub fn service_rate(&self, i: usize) -> f64 {
        self.n as f64 * self.mu[i] + self.sqrt_n() * self.mu_hat[i]
    }

    pub fn sigma_ser(&self) -> Vec<f64> {
        self.service.iter().map(ServiceLaw::sigma).collect()
    }

    /// Centering constant `α_n` under IC_α, `None` under IC₀.
    pub fn alpha_n(&self) -> Option<f64> {
        match self.ic.regime {
            Regime::Ic0 => None,
            Regime::IcAlpha { alpha_exponent } => Some((self.n as f64).powf(alpha_exponent)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_srv = self.servers();
        if n_srv == 0 {
            return Err(Error::invalid("lambda", "at least one server is required"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        for (name, v) in [
            ("lambda_hat", &self.lambda_hat),
            ("mu", &self.mu),
            ("mu_hat", &self.mu_hat),
            ("p", &self.p),
            ("ic.x0", &self.ic.x0),
        ] {
            if v.len() != n_srv {
                return Err(Error::invalid(
                    name,
                    format!("expected {n_srv} entries, got {}", v.len()),
                ));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{name}[{i}]"), "non-finite entry"));
            }
        }
        if self.service.len() != n_srv {
            return Err(Error::invalid(
                "service",
                format!("expected {n_srv} entries, got {}", self.service.len()),
            ));
        }
        for i in 0..n_srv {
            if !(self.lambda[i] > 0.0 && self.lambda[i].is_finite()) {
                return Err(Error::invalid(format!("lambda[{i}]"), "must be positive"));
            }
            if !(self.mu[i] > 0.0) {
                return Err(Error::invalid(format!("mu[{i}]"), "must be positive"));
            }
            if (self.lambda[i] - self.mu[i]).abs() > 1e-12 * self.mu[i] {
                return Err(Error::invalid(
                    format!("mu[{i}]"),
                    "critical load requires lambda[i] == mu[i]",
                ));
            }
            if self.arrival_rate(i) < 0.0 {
                return Err(Error::invalid(
                    format!("lambda_hat[{i}]"),
                    "arrival rate of the n-th system is negative",
                ));
            }
            if self.service_rate(i) <= 0.0 {
                return Err(Error::invalid(
                    format!("mu_hat[{i}]"),
                    "service rate of the n-th system must be positive",
                ));
            }
            self.service[i].validate(&format!("service[{i}]"))?;
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(Error::invalid("lambda0", "must be nonnegative"));
        }
        if self.p.iter().any(|&q| q < 0.0) {
            return Err(Error::invalid("p", "entries must be nonnegative"));
        }
        check_nonincreasing(&self.p, "p")?;
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("p", format!("must sum to 1 (sums to {total})")));
        }
        match self.ic.regime {
            Regime::Ic0 => {
                if let Some(i) = self.ic.x0.iter().position(|&v| v < 0.0) {
                    return Err(Error::invalid(format!("ic.x0[{i}]"), "must be nonnegative under ic0"));
                }
            }
            Regime::IcAlpha { alpha_exponent } => {
                if !(alpha_exponent > 0.5 && alpha_exponent < 1.0) {
                    return Err(Error::invalid(
                        "ic.alpha_exponent",
                        "must lie in (0.5, 1) so that n^{-1/2} alpha_n diverges",
                    ));
                }
            }
        }
        if let ResidualRule::Fixed { z0 } = &self.ic.residual {
            if z0.len() != n_srv {
                return Err(Error::invalid("ic.residual.z0", format!("expected {n_srv} entries")));
            }
            if let Some(i) = z0.iter().position(|&z| !(z > 0.0 && z.is_finite())) {
                return Err(Error::invalid(
                    format!("ic.residual.z0[{i}]"),
                    "must be positive and finite",
                ));
            }
        }
        Ok(())
    }
}

/// Data of the limiting rank-based equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Drift by rank, nonincreasing.
    pub b: Vec<f64>,
    /// Per-particle drift.
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Point-mass initial state.
    pub x0: Vec<f64>,
}

impl DiffusionParams {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.b.len();
        if n == 0 {
            return Err(Error::invalid("b", "must be nonempty"));
        }
        for (name, v) in [("m", &self.m), ("sigma", &self.sigma), ("x0", &self.x0)] {
            if v.len() != n {
                return Err(Error::invalid(name, format!("expected {n} entries, got {}", v.len())));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{name}[{i}]"), "non-finite entry"));
            }
        }
        check_nonincreasing(&self.b, "b")?;
        if let Some(i) = self.sigma.iter().position(|&s| s <= 0.0) {
            return Err(Error::invalid(format!("sigma[{i}]"), "must be positive"));
        }
        Ok(())
    }
}

/// `b_r = λ₀ p_r`, `m_i = λ̂_i − μ̂_i`, `σ_i = (λ_i + μ_i (σ_i^ser)²)^{1/2}`.
pub fn diffusion_params(mp: &ModelParams) -> Result<DiffusionParams> {
    mp.validate()?;
    let sigma_ser = mp.sigma_ser();
    Ok(DiffusionParams {
        b: mp.p.iter().map(|p| mp.lambda0 * p).collect(),
        m: mp.lambda_hat.iter().zip(&mp.mu_hat).map(|(l, u)| l - u).collect(),
        sigma: (0..mp.servers())
            .map(|i| (mp.lambda[i] + mp.mu[i] * sigma_ser[i] * sigma_ser[i]).sqrt())
            .collect(),
        x0: mp.ic.x0.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn model(p: Vec<f64>) -> ModelParams {
        let n_srv = p.len();
        ModelParams {
            n: 100,
            lambda: vec![1.0; n_srv],
            lambda_hat: vec![0.0; n_srv],
            lambda0: 1.0,
            mu: vec![1.0; n_srv],
            mu_hat: vec![0.0; n_srv],
            p,
            service: vec![ServiceLaw::Exponential; n_srv],
            ic: InitialSpec {
                regime: Regime::Ic0,
                x0: vec![0.0; n_srv],
                residual: ResidualRule::Fresh,
            },
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_vector(&[1., 1., 2., 2., 3.]).unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(rank_vector(&[1., 1., 3., 2., 2.]).unwrap(), vec![1, 2, 5, 3, 4]);
        assert_eq!(rank_vector(&[3., 2., 1.]).unwrap(), vec![3, 2, 1]);
        assert!(rank_vector(&[1.0, f64::NAN]).is_err());
        assert!(rank_vector(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn rank_matches_counting_definition() {
        let x = [0.5, -1.0, 0.5, 2.0, -1.0, 0.5];
        let r = rank_vector(&x).unwrap();
        for i in 0..x.len() {
            let below = x.iter().filter(|&&v| v < x[i]).count();
            let tied = (0..=i).filter(|&j| x[j] == x[i]).count();
            assert_eq!(r[i], below + tied);
        }
    }

    #[test]
    fn poc_examples() {
        assert_eq!(poc_probabilities(2, 2, true).unwrap(), vec![0.75, 0.25]);
        let p = poc_probabilities(3, 2, false).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15 && p[2] == 0.0);
        for mode in [true, false] {
            let p = poc_probabilities(7, 1, mode).unwrap();
            assert!(p.iter().all(|&q| q == p[0]));
            assert!((p[0] - 1.0 / 7.0).abs() < 1e-16);
        }
        assert!(poc_probabilities(3, 0, true).is_err());
        assert!(poc_probabilities(3, 4, false).is_err());
    }

    #[test]
    fn poc_monotone_and_normalised_up_to_64() {
        for servers in 1..=64 {
            for ell in 1..=servers {
                for mode in [true, false] {
                    let exact = poc_probabilities_exact(servers, ell, mode).unwrap();
                    let total: BigRational = exact.iter().cloned().sum();
                    assert!(total.is_one());
                    assert!(exact.windows(2).all(|w| w[0] >= w[1]));
                    let p = poc_probabilities(servers, ell, mode).unwrap();
                    assert!(p.windows(2).all(|w| w[0] >= w[1]));
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn permissible_examples() {
        assert_eq!(permissible_permutations(&[1., 2.]).unwrap(), vec![vec![1, 2]]);
        assert_eq!(
            permissible_permutations(&[1., 1.]).unwrap(),
            vec![vec![1, 2], vec![2, 1]]
        );
        assert_eq!(
            permissible_permutations(&[2., 1., 1.]).unwrap(),
            vec![vec![3, 1, 2], vec![3, 2, 1]]
        );
        assert!(matches!(permissible_permutations(&[0.0; 9]), Err(Error::Capacity(_))));
    }

    /// Brute force over all N! permutations against the defining implication.
    fn permissible_brute(x: &[f64]) -> Vec<Vec<usize>> {
        let all = permutations(&(1..=x.len()).collect::<Vec<_>>());
        let mut ok: Vec<Vec<usize>> = all
            .into_iter()
            .filter(|pi| (0..x.len()).all(|i| (0..x.len()).all(|j| !(x[i] < x[j]) || pi[i] < pi[j])))
            .collect();
        ok.sort();
        ok
    }

    #[test]
    fn hull_examples() {
        let b = [0.75, 0.25];
        let tol = default_hull_tol(&b);
        assert!(in_drift_hull(&b, &[1., 2.], &b, tol).unwrap());
        assert!(!in_drift_hull(&[0.25, 0.75], &[1., 2.], &b, tol).unwrap());
        assert!(!in_drift_hull(&[0.5, 0.5], &[1., 2.], &b, tol).unwrap());
        assert!(in_drift_hull(&[0.5, 0.5], &[5., 5.], &b, tol).unwrap());
        let eps = 1e-6;
        assert!(!in_drift_hull(&[0.75 + eps, 0.25 - eps], &[5., 5.], &b, tol).unwrap());
        assert!(in_drift_hull(&[0.25, 0.75], &[5., 5.], &b, tol).unwrap());
        // Non-monotone b is rejected rather than guessed at.
        assert!(in_drift_hull(&b, &[5., 5.], &[0.25, 0.75], tol).is_err());
    }

    /// Direct two-vertex hull test: beta = t*(b1,b2) + (1-t)*(b2,b1).
    fn two_vertex_hull(beta: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        if (beta[0] + beta[1] - b[0] - b[1]).abs() > tol {
            return false;
        }
        let span = b[0] - b[1];
        if span.abs() <= tol {
            return (beta[0] - b[0]).abs() <= tol;
        }
        let t = (beta[0] - b[1]) / span;
        t >= -tol / span && t <= 1.0 + tol / span
    }

    #[test]
    fn two_vertex_crosscheck() {
        let b = [0.9, 0.2];
        let tol = 1e-9;
        for k in -20..=120 {
            let t = k as f64 / 100.0;
            let beta = [t * b[0] + (1.0 - t) * b[1], t * b[1] + (1.0 - t) * b[0]];
            assert_eq!(
                in_drift_hull(&beta, &[3., 3.], &b, tol).unwrap(),
                two_vertex_hull(beta, b, tol),
                "t = {t}"
            );
        }
    }

    #[test]
    fn diffusion_params_substitution() {
        let mut mp = model(vec![0.75, 0.25]);
        mp.lambda_hat = vec![0.5, 0.0];
        mp.mu_hat = vec![0.2, 0.0];
        let dp = diffusion_params(&mp).unwrap();
        assert_eq!(dp.b, vec![0.75, 0.25]);
        assert!((dp.m[0] - 0.3).abs() < 1e-15 && dp.m[1] == 0.0);
        assert!(dp.sigma.iter().all(|&s| (s - 2f64.sqrt()).abs() < 1e-15));
        mp.service = vec![ServiceLaw::Erlang { k: 2 }; 2];
        let dp = diffusion_params(&mp).unwrap();
        assert!(dp.sigma.iter().all(|&s| (s - 1.5f64.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn model_validation() {
        assert!(model(vec![0.75, 0.25]).validate().is_ok());
        assert!(model(vec![0.25, 0.75]).validate().is_err());
        assert!(model(vec![0.5, 0.4]).validate().is_err());
        let mut mp = model(vec![0.75, 0.25]);
        mp.mu[1] = 1.5;
        assert!(mp.validate().is_err());
        let mut mp = model(vec![0.75, 0.25]);
        mp.ic.x0[0] = -1.0;
        assert!(mp.validate().is_err());
        mp.ic.regime = Regime::ic_alpha();
        assert!(mp.validate().is_ok());
        assert_eq!(mp.alpha_n(), Some(100f64.powf(0.75)));
    }

    fn small_vec() -> impl Strategy<Value = Vec<f64>> {
        // Few distinct values so ties are common.
        prop::collection::vec((-3i32..3).prop_map(|v| v as f64 * 0.5), 1..=6)
    }

    fn nonincreasing(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..2.0, len).prop_map(|mut v| {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v
        })
    }

    proptest! {
        #[test]
        fn rank_is_bijection_and_monotone_invariant(x in small_vec()) {
            let r = rank_vector(&x).unwrap();
            let mut sorted = r.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (1..=x.len()).collect::<Vec<_>>());
            let y: Vec<f64> = x.iter().map(|v| (v * 3.0).exp() - 7.0).collect();
            prop_assert_eq!(rank_vector(&y).unwrap(), r.clone());
            for i in 0..x.len() {
                for j in 0..x.len() {
                    if x[i] < x[j] { prop_assert!(r[i] < r[j]); }
                }
            }
        }

        #[test]
        fn permissible_matches_brute_force_and_contains_rank(x in small_vec()) {
            let set = permissible_permutations(&x).unwrap();
            prop_assert_eq!(&set, &permissible_brute(&x));
            prop_assert!(set.contains(&rank_vector(&x).unwrap()));
        }

        #[test]
        fn hull_contains_vertices_and_mixtures(
            (x, b, w) in small_vec().prop_flat_map(|x| {
                let n = x.len();
                (Just(x), nonincreasing(n), prop::collection::vec(0.0f64..1.0, 720))
            })
        ) {
            let tol = default_hull_tol(&b);
            let verts = permissible_permutations(&x).unwrap();
            let mut mix = vec![0.0; x.len()];
            let weights: Vec<f64> = w.iter().take(verts.len()).copied().collect();
            let total: f64 = weights.iter().sum::<f64>().max(1e-12);
            for (pi, wt) in verts.iter().zip(&weights) {
                let vertex: Vec<f64> = pi.iter().map(|&r| b[r - 1]).collect();
                prop_assert!(in_drift_hull(&vertex, &x, &b, 0.0).unwrap());
                for i in 0..x.len() { mix[i] += wt / total * vertex[i]; }
            }
            if total > 1e-9 {
                prop_assert!(in_drift_hull(&mix, &x, &b, tol).unwrap());
            }
            // Shifting one block's total pushes beta out of the hull.
            let mut shifted = mix.clone();
            shifted[0] += 1e-3;
            prop_assert!(!in_drift_hull(&shifted, &x, &b, tol).unwrap());
        }

        #[test]
        fn rearrangement_inequality(
            (u, v, perm_keys) in (1usize..8).prop_flat_map(|n| (
                nonincreasing(n),
                nonincreasing(n),
                prop::collection::vec(any::<u32>(), n),
            ))
        ) {
            let v: Vec<f64> = v.into_iter().rev().collect();
            let mut pi: Vec<usize> = (0..u.len()).collect();
            pi.sort_by_key(|&i| perm_keys[i]);
            let aligned: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            let permuted: f64 = pi.iter().zip(&v).map(|(&k, b)| u[k] * b).sum();
            prop_assert!(aligned <= permuted + 1e-12);
        }
    }
}
