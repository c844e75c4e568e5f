//! Exact-law and Monte Carlo engines for supercritical branching processes
//! with immigration in an i.i.d. random environment.
//!
//! * [`env_model`]: parametric environment atoms, sampling, assumption checks.
//! * [`pgf_engine`]: exact quenched laws via p.g.f. composition, DFT and
//!   linear-fractional closed forms; annealed conditional Monte Carlo.
//! * [`simulator`]: path simulation, the immigrant-line decomposition and
//!   the one-step ratio statistics.
//! * [`rwalk`]: the associated random walk, its characteristic function,
//!   cumulants, prospective minima and the first Edgeworth term.
//! * [`stats`]: decay-rate fits and distributional checks built on the above.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env_model;
pub mod error;
pub mod pgf_engine;
pub mod rwalk;
pub mod seed;
pub mod simulator;
pub mod stats;

pub use env_model::{EnvAtom, EnvPath, EnvStep, EnvironmentModel, Law};
pub use error::{Error, Result};
