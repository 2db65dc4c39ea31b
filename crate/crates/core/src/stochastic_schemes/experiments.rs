use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_paths::{DistanceBand, HolderEvaluator, Partition, SampledPath};
use crate::special_fns::{brownian_ratio_f, gaussian_abs_moment};
use crate::stochastic_schemes::estimate::{EstimateKind, NormKind, PairMoments};
use crate::stochastic_schemes::rate::{fit_rate, RateFit};
use crate::stochastic_schemes::rng::RngStream;
use crate::stochastic_schemes::{euler_maruyama, sample_brownian, SdeProblem};
use crate::summation::mean_and_variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrownianErrorKind {
    /// `sup_t ‖W_t − W^N_t‖_{L^p}`
    SupOfLp,
    /// `|W − W^N|_{C^α([0,T]; L^p)}`
    Seminorm,
    /// `‖W − W^N‖_{C^α([0,T]; L^p)}`
    FullNorm,
}

impl BrownianErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BrownianErrorKind::SupOfLp => "sup_of_lp",
            BrownianErrorKind::Seminorm => "seminorm",
            BrownianErrorKind::FullNorm => "full_norm",
        }
    }
}

/// Closed-form error of the piecewise-affine Brownian interpolant on the
/// uniform `n`-step grid.
pub fn brownian_interp_error_exact(
    kind: BrownianErrorKind,
    alpha: f64,
    p: f64,
    horizon: f64,
    n: usize,
) -> Result<f64> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::domain(
            "brownian_interp_error_exact",
            format!("alpha must lie in [0, 1/2], got {alpha}"),
        ));
    }
    if n == 0 || !(horizon > 0.0) {
        return Err(Error::invalid("need N >= 1 and T > 0"));
    }
    let wt = horizon.sqrt() * gaussian_abs_moment(p)?;
    let nf = n as f64;
    let scale = nf.powf(alpha - 0.5) * horizon.powf(-alpha) * wt;
    Ok(match kind {
        BrownianErrorKind::SupOfLp => wt / (2.0 * nf.sqrt()),
        BrownianErrorKind::Seminorm => scale * brownian_ratio_f(alpha)?,
        BrownianErrorKind::FullNorm => {
            scale * (horizon.powf(alpha) / (2.0 * nf.powf(alpha)) + brownian_ratio_f(alpha)?)
        }
    })
}

/// One line of `brownian_exact.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianRow {
    pub alpha: f64,
    pub p: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub kind: BrownianErrorKind,
    pub exact: f64,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub oversample: usize,
    pub samples: usize,
}

/// Error path `W − [W]_θ` with `θ` the uniform `n`-step grid, sampled on
/// the uniform `n * oversample` grid.
pub(crate) fn brownian_interp_error_sampler(
    n: usize,
    oversample: usize,
    horizon: f64,
) -> Result<impl Fn(&RngStream) -> Result<SampledPath> + Sync> {
    let fine = Partition::uniform(n * oversample, horizon)?;
    let coarse = Partition::uniform(n, horizon)?;
    Ok(move |s: &RngStream| {
        let w = sample_brownian(&fine, 1, s)?;
        w.sub(&w.interpolant_on(&coarse)?)
    })
}

pub fn brownian_exact_experiment(
    alphas: &[f64],
    ps: &[f64],
    ns: &[usize],
    samples: usize,
    oversample: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<BrownianRow>> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..=0.5).contains(*a)) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1/2], got {a}")));
    }
    let root = RngStream::new(seed).derive("brownian", 0);
    let mut rows = Vec::new();
    for &n in ns {
        let sampler = brownian_interp_error_sampler(n, oversample, horizon)?;
        let stream = root.derive("N", n as u64);
        for &p in ps {
            let moments = PairMoments::accumulate(&sampler, p, samples, 1, &stream, true)?;
            for &alpha in alphas {
                for kind in [
                    BrownianErrorKind::SupOfLp,
                    BrownianErrorKind::Seminorm,
                    BrownianErrorKind::FullNorm,
                ] {
                    let est = match kind {
                        BrownianErrorKind::SupOfLp => {
                            moments.estimate(EstimateKind::SupOfLp, alpha, NormKind::Full)?
                        }
                        BrownianErrorKind::Seminorm => {
                            moments.estimate(EstimateKind::HolderOfLp, alpha, NormKind::Seminorm)?
                        }
                        BrownianErrorKind::FullNorm => {
                            moments.estimate(EstimateKind::HolderOfLp, alpha, NormKind::Full)?
                        }
                    };
                    rows.push(BrownianRow {
                        alpha,
                        p,
                        n,
                        horizon,
                        kind,
                        exact: brownian_interp_error_exact(kind, alpha, p, horizon, n)?,
                        mc_estimate: est.value,
                        mc_stderr: est.std_error,
                        oversample,
                        samples,
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EulerRateConfig {
    pub ns: Vec<usize>,
    pub p: f64,
    pub alpha: f64,
    pub samples: usize,
    pub seed: u64,
    pub norm: NormKind,
    /// Resolution of the shared Brownian path (and of the fallback Euler
    /// reference) as a multiple of the largest `N`.
    pub fine_factor: usize,
}

impl Default for EulerRateConfig {
    fn default() -> Self {
        Self {
            ns: vec![8, 16, 32, 64, 128],
            p: 2.0,
            alpha: 0.0,
            samples: 4000,
            seed: 0,
            norm: NormKind::Full,
            fine_factor: 8,
        }
    }
}

/// One line of `euler_rate.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub alpha: f64,
    pub error: f64,
    pub stderr: f64,
}

pub(crate) fn check_nested(ns: &[usize]) -> Result<()> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::invalid("resolution list must be nonempty and positive"));
    }
    if let Some(w) = ns.windows(2).find(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
        return Err(Error::invalid(format!(
            "resolutions must be increasing and nested ({} does not divide {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// `L^p(P; C^α)` error of Euler–Maruyama against the exact solution (or a
/// fine Euler reference), every `Y^N` driven by the same fine Brownian path.
pub fn euler_rate_experiment(problem: &SdeProblem, cfg: &EulerRateConfig) -> Result<(Vec<EulerRow>, RateFit)> {
    check_nested(&cfg.ns)?;
    if cfg.samples < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    if !(cfg.p >= 1.0) || cfg.fine_factor == 0 {
        return Err(Error::invalid("need p >= 1 and fine_factor >= 1"));
    }
    let n_fine = cfg.fine_factor * cfg.ns.last().unwrap();
    let fine = Partition::uniform(n_fine, problem.horizon)?;
    let eval = HolderEvaluator::new(&fine, cfg.alpha, DistanceBand::Full)?;
    let root = RngStream::new(cfg.seed).derive("euler", 0);

    let per_sample: Vec<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let w = sample_brownian(&fine, problem.m, &root.derive("sample", i as u64))?;
            let reference = match problem.exact_path(&w)? {
                Some(x) => x,
                None => euler_maruyama(problem, n_fine, &w)?,
            };
            cfg.ns
                .iter()
                .map(|&n| {
                    let e = euler_maruyama(problem, n, &w)?.sub(&reference)?;
                    let semi = eval.seminorm(e.values(), e.dim());
                    Ok(match cfg.norm {
                        NormKind::Seminorm => semi,
                        NormKind::Full => semi + e.sup_norm(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cfg.ns.len());
    for (k, &n) in cfg.ns.iter().enumerate() {
        let powered: Vec<f64> = per_sample.iter().map(|v| v[k].powf(cfg.p)).collect();
        let (mean, var) = mean_and_variance(&powered);
        let (error, stderr) = if mean > 0.0 {
            let e = mean.powf(1.0 / cfg.p);
            (e, e / (cfg.p * mean) * (var / cfg.samples as f64).sqrt())
        } else {
            (0.0, 0.0)
        };
        rows.push(EulerRow {
            n,
            p: cfg.p,
            alpha: cfg.alpha,
            error,
            stderr,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_rate(&xs, &ys)?;
    Ok((rows, fit))
}
