//! Constrained Markov-game engine for multi-operator CO₂ storage.
//!
//! Several operators inject CO₂ into a shared, pressure-connected reservoir.
//! Each one has a leased project area with its own pressure ceiling. The crate
//! provides:
//!
//! - [`env`]: a single-phase pressure-diffusion reservoir advanced by implicit
//!   backward-Euler substeps and a conjugate-gradient solver,
//! - [`econ`]: present value, NPV, pressure penalties and coalition reward
//!   pooling,
//! - [`game`]: the constrained Markov game built from the two above,
//! - [`neural`]: small MLPs with hand-written backprop and Adam,
//! - [`maddpg`]: Lagrangian-constrained MADDPG (reward and cost critics,
//!   dual ascent on per-agent multipliers),
//! - [`moo`]: a constrained NSGA-II baseline over full rate schedules,
//! - [`harness`]: configuration, persistence and the command-line driver.

pub mod econ;
pub mod env;
pub mod error;
pub mod game;
pub mod harness;
pub mod maddpg;
pub mod moo;
pub mod neural;

pub use error::{Error, Result};
