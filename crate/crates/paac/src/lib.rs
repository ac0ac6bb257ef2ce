//! Actor-critic deep Galerkin solver for principal-agent HJB equations.
//!
//! The solver alternates stochastic-gradient updates of a value-function
//! surrogate (critic) and a feedback-control surrogate (actor) so that the
//! HJB residual and the first-order conditions of the implicit Hamiltonian
//! vanish on sampled space-time batches. Terminal conditions are injected
//! into the value surrogate exactly rather than penalized, and control
//! constraints enter through a pointwise penalty on the actor loss.
//!
//! Modules:
//! - [`jet`] / [`tape`]: second-order forward jets recorded on a reverse-mode
//!   tape (derivatives of the surrogate are tape quantities themselves).
//! - [`net`]: residual swish networks and the gated comparator architecture,
//!   value wrapper with exact terminal injection, checkpoints.
//! - [`problems`]: the built-in principal-agent case studies with
//!   Hamiltonians, first-order conditions, penalties and closed forms.
//! - [`sampling`]: uniform, residual-adaptive and time-stratified training
//!   designs plus the fixed validation set.
//! - [`trainer`]: Adam, the polynomial learning-rate schedule, interior and
//!   control losses, and the alternating training loop with its stopping rule.
//! - [`diagnostics`]: validation metrics, analytic error grids, qualitative
//!   shape checks, Monte Carlo rollouts and grid export.
//! - [`config`] / [`bench`]: run configuration, artifacts, benchmark arms.

pub mod bench;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fd;
pub mod jet;
pub mod net;
pub mod problems;
pub mod rngs;
pub mod sampling;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
