//! Simulation laboratory for power-of-choice load balancing with a thin
//! load-balancing stream.
//!
//! * [`model`]: parameters, the rank function, routing probabilities and the
//!   drift hull of the rank-based inclusion.
//! * [`queue`]: event-driven simulation of the prelimit system and its
//!   diffusion-scaled processes.
//! * [`reflect`]: the one-dimensional Skorokhod map.
//! * [`sde`]: Euler–Maruyama for the rank-based (reflected) diffusion and
//!   its inclusion relaxation.
//! * [`stats`]: KS comparison, ranked marginals and other estimators.
//! * [`harness`]: configuration and experiment drivers behind the CLI.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod model;
pub mod queue;
pub mod reflect;
pub mod rng;
pub mod sde;
pub mod service;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    default_hull_tol, diffusion_params, in_drift_hull, permissible_permutations, poc_probabilities, rank_vector,
    DiffusionParams, InitialSpec, ModelParams, Regime, ResidualRule,
};
pub use queue::{martingale_residual, scaled_path, simulate, EventLog, InitialCondition, ScaledPath};
pub use reflect::{reflect_step, skorokhod_map, ReflectedPair};
pub use sde::{integrate, integrate_coupled, occupation_near_tie, SdePath, TieRule};
pub use service::ServiceLaw;
pub use stats::{ks_statistic, ranked_marginals, Report, SampleSet};
