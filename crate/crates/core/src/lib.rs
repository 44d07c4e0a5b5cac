//! Non-Gaussian Bayesian filtering with rational density surrogates fitted
//! to power moments and generalized logarithmic moments.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod baselines;
pub mod density;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod moments;
pub mod poly;
pub mod quadrature;
pub mod solver;
pub mod surrogate;

pub use baselines::{KalmanState, ParticleEnsemble};
pub use density::{Component, Density};
pub use error::{Error, Result};
pub use filter::{FilterConfig, FilterState, Method, SystemModel};
pub use moments::MomentVector;
pub use quadrature::{GridFunction, GridSpec};
pub use solver::{Fit, SolverOptions, Termination};
pub use surrogate::RationalSurrogate;
