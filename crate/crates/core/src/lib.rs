//! Secrecy-rate evaluation and transmit power optimization for cooperative
//! (distributed) MIMO links facing an eavesdropper confined to a finite set of
//! candidate locations.
//!
//! The crate is organized bottom-up:
//!
//! - [`special`]: log-gamma, terminating hypergeometric series, Vandermonde and
//!   log-domain determinants.
//! - [`scenario`]: node layouts and normalized path-loss gains.
//! - [`channel`]: Rayleigh main/eavesdropper channels and Haar unitaries.
//! - [`avg_rate`]: Bob's rate, the Haar-averaged closed-form Eve rate, their
//!   gradients and Monte Carlo oracles.
//! - [`optimizer`]: water-filling, the surrogate objective, the concave
//!   sub-problem solver, the iterative outer loop and an exhaustive baseline.
//! - [`cli`]: experiment configuration, campaign runner and summaries.

pub mod avg_rate;
pub mod channel;
pub mod cli;
pub mod error;
pub mod optimizer;
pub mod rng;
pub mod scenario;
pub mod special;

pub use error::{Error, Result};
pub use rng::RandomSource;
