//! Random two-sided matching markets and deferred acceptance.
//!
//! The crate samples random markets (symmetric Erdős-Rényi style or with
//! uniformly random lists on one side), runs deferred acceptance explicitly or
//! with lazily revealed preferences, checks stability against brute force,
//! and provides the balls-in-bins and Good/Bad/Neutral game tools used to
//! reason about proposal counts and rejection chains.

pub mod bins;
pub mod config;
pub mod da;
pub mod error;
pub mod experiments;
pub mod game;
pub mod market;
pub mod parallel;
pub mod rng;
pub mod stability;
pub mod stats;

pub use da::{run_da, run_da_lazy, DAResult, DaOptions, Proposing};
pub use error::{Error, Result};
pub use market::{sample_market, AgentId, MarketConfig, MarketInstance, Model, Side};
pub use stability::{find_blocking_pairs, is_stable, Matching};
