//! Unit-mean service-time laws.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A service-time distribution on (0, ∞) with mean 1.
///
/// Server `i` in the `n`-th system draws `law.sample() / mu_n[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ServiceLaw {
    Exponential,
    /// Erlang with `k` phases, coefficient of variation 1/√k.
    Erlang {
        k: u32,
    },
    /// Two-phase hyperexponential with balanced means and the given
    /// coefficient of variation (must exceed 1).
    Hyperexponential {
        cv: f64,
    },
    LogNormal {
        cv: f64,
    },
}

impl ServiceLaw {
    /// Standard deviation of the unit-mean law (σ^ser).
    pub fn sigma(&self) -> f64 {
        match *self {
            ServiceLaw::Exponential => 1.0,
            ServiceLaw::Erlang { k } => 1.0 / (k as f64).sqrt(),
            ServiceLaw::Hyperexponential { cv } | ServiceLaw::LogNormal { cv } => cv,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        match *self {
            ServiceLaw::Exponential => Ok(()),
            ServiceLaw::Erlang { k } if k >= 1 => Ok(()),
            ServiceLaw::Erlang { .. } => Err(Error::invalid(field, "erlang k must be at least 1")),
            ServiceLaw::Hyperexponential { cv } if cv.is_finite() && cv > 1.0 => Ok(()),
            ServiceLaw::Hyperexponential { .. } => {
                Err(Error::invalid(field, "hyperexponential cv must be finite and > 1"))
            }
            ServiceLaw::LogNormal { cv } if cv.is_finite() && cv > 0.0 => Ok(()),
            ServiceLaw::LogNormal { .. } => Err(Error::invalid(field, "lognormal cv must be finite and > 0")),
        }
    }

    /// Build a sampler. The law must already be valid.
    pub fn sampler(&self) -> ServiceSampler {
        match *self {
            ServiceLaw::Exponential => ServiceSampler::Exponential,
            ServiceLaw::Erlang { k } => {
                ServiceSampler::Gamma(Gamma::new(k as f64, 1.0 / k as f64).expect("validated erlang"))
            }
            ServiceLaw::Hyperexponential { cv } => {
                let c2 = cv * cv;
                let p1 = 0.5 * (1.0 + ((c2 - 1.0) / (c2 + 1.0)).sqrt());
                // Balanced means: p1/r1 = p2/r2 = 1/2.
                ServiceSampler::Hyper {
                    p1,
                    mean1: 1.0 / (2.0 * p1),
                    mean2: 1.0 / (2.0 * (1.0 - p1)),
                }
            }
            ServiceLaw::LogNormal { cv } => {
                let s2 = (1.0 + cv * cv).ln();
                ServiceSampler::LogNormal(LogNormal::new(-0.5 * s2, s2.sqrt()).expect("validated lognormal"))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ServiceSampler {
    Exponential,
    Gamma(Gamma<f64>),
    Hyper { p1: f64, mean1: f64, mean2: f64 },
    LogNormal(LogNormal<f64>),
}

impl ServiceSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ServiceSampler::Exponential => Exp1.sample(rng),
            ServiceSampler::Gamma(g) => g.sample(rng),
            ServiceSampler::Hyper { p1, mean1, mean2 } => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<f64>() < *p1 {
                    e * mean1
                } else {
                    e * mean2
                }
            }
            ServiceSampler::LogNormal(d) => d.sample(rng),
        }
    }
}
