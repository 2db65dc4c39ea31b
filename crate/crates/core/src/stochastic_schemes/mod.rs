//! Brownian sampling, the Euler–Maruyama scheme with its affine-in-time
//! extension, Monte Carlo estimators of mixed `L^p` / Hölder error norms,
//! and convergence-rate experiments.

mod brownian;
mod estimate;
mod experiments;
mod rate;
pub mod rng;
mod sde;

pub use brownian::{brownian_increments, sample_brownian};
pub use estimate::{
    estimate_holder_of_lp, estimate_lp_of_holder, EstimateKind, LpHolderEstimate, NormKind,
    PairMoments,
};
pub use experiments::{
    brownian_exact_experiment, brownian_interp_error_exact, euler_rate_experiment,
    BrownianErrorKind, BrownianRow, EulerRateConfig, EulerRow,
};
pub use rate::{fit_rate, RateFit};
pub use rng::{derive_stream, RngStream};
pub use sde::{euler_maruyama, SdeProblem};
