//! Sequential Monte Carlo inference for individual-based epidemic models
//! observed at the individual level.
//!
//! The crate provides:
//! - compartmental models with count-coupled per-individual kernels ([`model`]),
//! - a per-individual reporting observation layer ([`observe`]),
//! - a multinomial mean-field smoother over compartment counts ([`meanfield`]),
//! - lookahead tables and the approximate-optimal proposal built from them
//!   ([`lookahead`]),
//! - a particle filter with bootstrap, one-step adapted, and lookahead
//!   configurations ([`smc`]),
//! - exact small-population oracles by joint-state enumeration ([`exact`]),
//! - particle marginal Metropolis-Hastings over model parameters ([`pmmh`]),
//! - serialization for scenarios, rates, observations and filter output ([`io`]).

pub mod error;
pub mod exact;
pub mod io;
pub mod lookahead;
pub mod math;
pub mod meanfield;
pub mod model;
pub mod observe;
pub mod pmmh;
pub mod rng;
pub mod smc;

pub use error::{DegenerateProposal, Error, Result};
