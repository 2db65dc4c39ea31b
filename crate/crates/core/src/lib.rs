//! Hölder-norm error analysis for discretized stochastic paths: grid paths
//! and piecewise-affine interpolation, deterministic Hölder inequalities,
//! Brownian and Euler–Maruyama strong rates in Hölder norms, spectral
//! Galerkin approximation of a stochastic heat equation, and multilevel
//! Monte Carlo for path-valued functionals.

pub mod cli;
pub mod error;
pub mod grid_paths;
pub mod holder_inequalities;
pub mod mlmc;
pub mod special_fns;
pub mod spectral_galerkin;
pub mod stochastic_schemes;
pub mod summation;

pub use error::{Error, Result};
