//! Simulator and solvers for joint AP association and edge-server offloading
//! of generative inference jobs.
//!
//! UEs pick an access point and an edge server; each resource is shared
//! proportionally, so a UE's delay is the load of the resources it uses. The
//! association and offloading subgames are potential games, solved here by
//! decentralized learning automata ([`masl`]) and by the benchmark
//! algorithms in [`baselines`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod env;
pub mod error;
pub mod game;
pub mod harness;
pub mod latency;
pub mod masl;
pub mod real;
pub mod rng;
pub mod scenario;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;

/// Mixed strategies of all UEs in double precision.
pub type MixedStrategy = masl::MixedStrategyState<f64>;
/// Log-domain potential in double precision.
pub type Potential = game::PotentialValue<f64>;
