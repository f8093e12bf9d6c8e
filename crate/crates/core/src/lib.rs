//! Constructive continuous-time game-theoretic probability on sampled paths.
//!
//! Dyadic crossing ladders estimate quadratic variation, simple trading
//! strategies turn path properties into capital, the quadratic-variation clock
//! normalizes paths, and a heat-equation price ladder hedges smooth claims of
//! the normalized path.

pub mod cli;
pub mod crossings;
pub mod emergence;
pub mod error;
pub mod hedging;
pub mod paths;
pub mod special;
pub mod strategies;
pub mod timechange;
pub mod variation;

pub use error::{Error, Result};
