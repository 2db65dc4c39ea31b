//! Monte Carlo and multilevel Monte Carlo estimators for path-valued
//! expectations, Rademacher randomisation checks, and the multilevel
//! convergence experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_paths::{euclidean, DistanceBand, HolderEvaluator, Partition, SampledPath};
use crate::stochastic_schemes::rng::{inverse_normal_cdf, Uniforms};
use crate::stochastic_schemes::{euler_maruyama, fit_rate, sample_brownian, RateFit, RngStream, SdeProblem};
use crate::summation::{mean_and_variance, pairwise_sum, pairwise_sum_vectors};

/// Samples per parallel work unit; fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 64;

/// Level resolutions `N_ℓ` and sample counts `M_ℓ`, `ℓ = 0..=L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmcSchedule {
    resolutions: Vec<usize>,
    samples: Vec<usize>,
}

impl MlmcSchedule {
    pub fn new(resolutions: Vec<usize>, samples: Vec<usize>) -> Result<Self> {
        if resolutions.is_empty() || resolutions.len() != samples.len() {
            return Err(Error::invalid("need one sample count per level and at least one level"));
        }
        if resolutions.contains(&0) || samples.contains(&0) {
            return Err(Error::invalid("resolutions and sample counts must be positive"));
        }
        if resolutions.windows(2).any(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
            return Err(Error::invalid("level resolutions must be increasing and nested"));
        }
        Ok(Self { resolutions, samples })
    }

    /// Index `L` of the finest level.
    pub fn finest_level(&self) -> usize {
        self.resolutions.len() - 1
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    /// `Σ_ℓ M_ℓ N_ℓ` in fine-step equivalents.
    pub fn total_cost(&self) -> f64 {
        self.resolutions
            .iter()
            .zip(&self.samples)
            .map(|(&n, &m)| (n * m) as f64)
            .sum()
    }
}

/// `N_ℓ = N0 · 2^ℓ`, `M_ℓ = 2^{L−ℓ}`.
pub fn geometric_schedule(levels: usize, n0: usize) -> Result<MlmcSchedule> {
    if n0 == 0 {
        return Err(Error::invalid("N0 must be >= 1"));
    }
    if levels > 40 {
        return Err(Error::invalid("L must be <= 40"));
    }
    MlmcSchedule::new(
        (0..=levels).map(|l| n0 << l).collect(),
        (0..=levels).map(|l| 1usize << (levels - l)).collect(),
    )
}

/// Pointwise path functionals with their local Lipschitz data
/// `‖f(v) − f(w)‖ <= c (1 + ‖v‖^r + ‖w‖^r) ‖v − w‖` in the `C^α` norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Identity,
    /// `x ↦ x / (1 + ‖x‖)` at every time
    Saturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFunctional {
    pub kind: FunctionalKind,
    pub lipschitz_c: f64,
    pub growth_r: f64,
    pub alpha: f64,
}

impl PathFunctional {
    pub fn identity(alpha: f64) -> Self {
        Self {
            kind: FunctionalKind::Identity,
            lipschitz_c: 1.0,
            growth_r: 0.0,
            alpha,
        }
    }

    pub fn saturating(alpha: f64) -> Self {
        Self {
            kind: FunctionalKind::Saturating,
            lipschitz_c: 1.0,
            growth_r: 1.0,
            alpha,
        }
    }

    pub fn apply(&self, path: &SampledPath) -> Result<SampledPath> {
        match self.kind {
            FunctionalKind::Identity => Ok(path.clone()),
            FunctionalKind::Saturating => path.map_states(path.dim(), |x| {
                let scale = 1.0 / (1.0 + euclidean(x));
                x.iter().map(|v| v * scale).collect()
            }),
        }
    }

    /// Largest ratio `‖f(v) − f(w)‖ / ((1 + ‖v‖^r + ‖w‖^r) ‖v − w‖)` over
    /// random piecewise-affine pairs on `grid`; must not exceed `lipschitz_c`.
    pub fn lipschitz_spot_check(&self, grid: &Partition, dim: usize, pairs: usize, stream: &RngStream) -> Result<f64> {
        let norm = DiscreteNorm::Holder(self.alpha);
        let eval = norm.evaluator(grid)?;
        let mut worst = 0.0f64;
        for i in 0..pairs {
            let mut u = stream.derive("lipschitz_pair", i as u64).uniforms();
            let scale = 10f64.powf(4.0 * u.next_open01() - 2.0);
            let mut random = || {
                let values = (0..grid.len() * dim).map(|_| scale * u.next_symmetric()).collect();
                SampledPath::new(grid.clone(), values, dim)
            };
            let v = random()?;
            let w = random()?;
            let num = norm.eval_with(&eval, &self.apply(&v)?.sub(&self.apply(&w)?)?);
            let nv = norm.eval_with(&eval, &v);
            let nw = norm.eval_with(&eval, &w);
            let den = (1.0 + nv.powf(self.growth_r) + nw.powf(self.growth_r)) * norm.eval_with(&eval, &v.sub(&w)?);
            if den > 0.0 {
                worst = worst.max(num / den);
            }
        }
        Ok(worst)
    }
}

/// Discrete norm on an output grid: the sup norm or the full `C^γ` norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteNorm {
    Sup,
    Holder(f64),
}

impl DiscreteNorm {
    fn evaluator(&self, grid: &Partition) -> Result<Option<HolderEvaluator>> {
        match *self {
            DiscreteNorm::Sup => Ok(None),
            DiscreteNorm::Holder(g) => HolderEvaluator::new(grid, g, DistanceBand::Full).map(Some),
        }
    }

    fn eval_with(&self, eval: &Option<HolderEvaluator>, path: &SampledPath) -> f64 {
        let sup = path.sup_norm();
        match eval {
            None => sup,
            Some(e) => sup + e.seminorm(path.values(), path.dim()),
        }
    }

    pub fn eval(&self, path: &SampledPath) -> Result<f64> {
        Ok(self.eval_with(&self.evaluator(path.grid())?, path))
    }
}

/// Deterministic parallel accumulation of `count` paths on `grid`: returns
/// the pairwise sum of the values and the per-sample norms in index order.
fn accumulate_paths<F>(count: usize, grid: &Partition, dim: usize, norm: DiscreteNorm, sample: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(usize) -> Result<SampledPath> + Sync,
{
    let eval = norm.evaluator(grid)?;
    let width = grid.len() * dim;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let mut norms = Vec::with_capacity(CHUNK);
            for k in c * CHUNK..((c + 1) * CHUNK).min(count) {
                let path = sample(k)?;
                if path.grid() != grid || path.dim() != dim {
                    return Err(Error::invalid("sample paths do not share the output grid"));
                }
                for (a, v) in acc.iter_mut().zip(path.values()) {
                    *a += v;
                }
                norms.push(norm.eval_with(&eval, &path));
            }
            Ok((acc, norms))
        })
        .collect::<Result<_>>()?;
    let sums: Vec<Vec<f64>> = parts.iter().map(|p| p.0.clone()).collect();
    let norms = parts.into_iter().flat_map(|p| p.1).collect();
    Ok((pairwise_sum_vectors(&sums), norms))
}

/// Plain Monte Carlo mean of `m` paths; sample `k` uses
/// `stream.derive("replica", k)`.
pub fn mc_mean<S>(
    sampler: &S,
    m: usize,
    norm: DiscreteNorm,
    stream: &RngStream,
    reference: Option<&SampledPath>,
) -> Result<(SampledPath, Option<f64>)>
where
    S: Fn(&RngStream) -> Result<SampledPath> + Sync,
{
    if m == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let first = sampler(&stream.derive("replica", 0))?;
    let grid = first.grid().clone();
    let dim = first.dim();
    let (sum, _) = accumulate_paths(m, &grid, dim, norm, |k| {
        if k == 0 {
            Ok(first.clone())
        } else {
            sampler(&stream.derive("replica", k as u64))
        }
    })?;
    let mean = SampledPath::new(grid, sum.into_iter().map(|v| v / m as f64).collect(), dim)?;
    let err = match reference {
        Some(r) => Some(norm.eval(&mean.sub(r)?)?),
        None => None,
    };
    Ok((mean, err))
}

/// What the coupled sampler must produce for one `(level, replica)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelRequest {
    pub level: usize,
    pub n_fine: usize,
    /// `None` on level 0.
    pub n_coarse: Option<usize>,
}

/// A coupled pair; each path carries the fingerprint of the stream that
/// drove it.
#[derive(Debug, Clone)]
pub struct LevelSample {
    pub fine: SampledPath,
    pub fine_driver: u64,
    pub coarse: Option<(SampledPath, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub correction_norm_mean: f64,
    pub correction_norm_var: f64,
}

#[derive(Debug, Clone)]
pub struct MlmcEstimate {
    pub mean_path: SampledPath,
    pub per_level: Vec<LevelStats>,
    pub total_cost: f64,
}

/// Stream of replica `k` on level `ℓ`.
pub fn level_stream(root: &RngStream, level: usize, replica: usize) -> RngStream {
    root.derive("mlmc", level as u64).derive("replica", replica as u64)
}

/// Telescoping multilevel estimator
/// `(1/M_0) Σ_k g(Y^{N_0}) + Σ_{ℓ≥1} (1/M_ℓ) Σ_k [g(Y^{N_ℓ}) − g(Y^{N_{ℓ−1}})]`.
///
/// Every path is lifted by piecewise-affine interpolation to the output grid
/// (uniform with `N_L` steps) before `g` is applied, so `g(Y^{N_ℓ})` has
/// the same law on level `ℓ` and as the coarse member on level `ℓ+1`.
pub fn mlmc_mean<S>(
    sampler: &S,
    schedule: &MlmcSchedule,
    g: &PathFunctional,
    norm: DiscreteNorm,
    horizon: f64,
    root: &RngStream,
) -> Result<MlmcEstimate>
where
    S: Fn(&LevelRequest, &RngStream) -> Result<LevelSample> + Sync,
{
    let finest = schedule.finest_level();
    let out_grid = Partition::uniform(schedule.resolutions()[finest], horizon)?;
    let lift = |p: &SampledPath| -> Result<SampledPath> {
        if p.grid() == &out_grid {
            Ok(p.clone())
        } else {
            p.resample(&out_grid)
        }
    };
    let correction = |level: usize, k: usize| -> Result<SampledPath> {
        let stream = level_stream(root, level, k);
        let req = LevelRequest {
            level,
            n_fine: schedule.resolutions()[level],
            n_coarse: level.checked_sub(1).map(|l| schedule.resolutions()[l]),
        };
        let sample = sampler(&req, &stream)?;
        let expected = stream.fingerprint();
        if sample.fine_driver != expected {
            return Err(Error::ContractViolation(format!(
                "level {level} replica {k}: fine path not driven by its derived stream"
            )));
        }
        let fine = g.apply(&lift(&sample.fine)?)?;
        match (req.n_coarse, sample.coarse) {
            (None, None) => Ok(fine),
            (Some(_), Some((coarse, driver))) => {
                if driver != sample.fine_driver {
                    return Err(Error::ContractViolation(format!(
                        "level {level} replica {k}: fine and coarse paths use different drivers"
                    )));
                }
                fine.sub(&g.apply(&lift(&coarse)?)?)
            }
            (None, Some(_)) => Err(Error::ContractViolation("level 0 sample carries a coarse path".into())),
            (Some(_), None) => Err(Error::ContractViolation(format!(
                "level {level} replica {k}: missing coarse path"
            ))),
        }
    };

    let mut total: Option<Vec<f64>> = None;
    let mut dim = 0;
    let mut per_level = Vec::with_capacity(finest + 1);
    for level in 0..=finest {
        let m = schedule.samples()[level];
        let probe = correction(level, 0)?;
        dim = probe.dim();
        let (sum, norms) = accumulate_paths(m, &out_grid, dim, norm, |k| {
            if k == 0 {
                Ok(probe.clone())
            } else {
                correction(level, k)
            }
        })?;
        let (mean_norm, var_norm) = mean_and_variance(&norms);
        per_level.push(LevelStats {
            level,
            n: schedule.resolutions()[level],
            m,
            correction_norm_mean: mean_norm,
            correction_norm_var: if m > 1 { var_norm } else { 0.0 },
        });
        let level_mean: Vec<f64> = sum.into_iter().map(|v| v / m as f64).collect();
        total = Some(match total {
            None => level_mean,
            Some(t) => t.iter().zip(&level_mean).map(|(a, b)| a + b).collect(),
        });
    }
    Ok(MlmcEstimate {
        mean_path: SampledPath::new(out_grid, total.expect("at least one level"), dim)?,
        per_level,
        total_cost: schedule.total_cost(),
    })
}

/// Coupled Euler–Maruyama sampler: one Brownian path on the fine level grid
/// drives both the `N_ℓ`- and the `N_{ℓ−1}`-step scheme.
pub fn sde_level_sampler(problem: &SdeProblem) -> impl Fn(&LevelRequest, &RngStream) -> Result<LevelSample> + Sync + '_ {
    move |req: &LevelRequest, stream: &RngStream| {
        let grid = Partition::uniform(req.n_fine, problem.horizon)?;
        let w = sample_brownian(&grid, problem.m, stream)?;
        let fine = euler_maruyama(problem, req.n_fine, &w)?;
        let coarse = match req.n_coarse {
            Some(n) => Some((euler_maruyama(problem, n, &w)?, stream.fingerprint())),
            None => None,
        };
        Ok(LevelSample {
            fine,
            fine_driver: stream.fingerprint(),
            coarse,
        })
    }
}

/// `Σ_{ℓ=1}^{L} 2^{−ρℓ} 2^{−(L−ℓ)/2}` in closed form.
pub fn theoretical_level_sum(rho: f64, levels: usize) -> Result<f64> {
    if levels == 0 {
        return Err(Error::invalid("L must be >= 1"));
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("rho must be >= 0, got {rho}")));
    }
    let l = levels as f64;
    if rho == 0.5 {
        return Ok(2f64.powf(-l / 2.0) * l);
    }
    let gap = (0.5 - rho).abs();
    Ok(2f64.powf(-l * rho.min(0.5)) * -(-gap * l * std::f64::consts::LN_2).exp_m1()
        / (1.0 - 2f64.powf(rho - 0.5)).abs())
}

/// Direct summation of the level sum, for cross-checking.
pub fn level_sum_direct(rho: f64, levels: usize) -> f64 {
    let l = levels as f64;
    pairwise_sum(
        &(1..=levels)
            .map(|k| {
                let k = k as f64;
                2f64.powf(-rho * k - (l - k) / 2.0)
            })
            .collect::<Vec<_>>(),
    )
}

/// Monte Carlo estimates behind the randomisation and type inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherReport {
    pub k: usize,
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub trials: usize,
    /// `‖Σ ξ_j‖_{L^p}` and its standard error.
    pub sum_norm: f64,
    pub sum_norm_se: f64,
    /// `‖Σ r_j ξ_j‖_{L^p}`.
    pub randomized_norm: f64,
    pub randomized_norm_se: f64,
    /// `(Σ_j ‖ξ_j‖_{L^p}^q)^{1/q}`.
    pub individual_norm: f64,
    pub individual_norm_se: f64,
    /// `sum_norm <= 2 randomized_norm + 4 std errors`.
    pub randomisation_holds: bool,
    /// Hilbert case `p = q = 2`: `sum_norm <= 2 individual_norm + 4 std errors`
    /// (`None` for other exponents).
    pub hilbert_type_holds: Option<bool>,
}

/// `(m^{1/p}, se)` from samples `y_i = X_i^p` by the delta method.
fn root_moment(ys: &[f64], p: f64) -> (f64, f64) {
    let (mean, var) = mean_and_variance(ys);
    if mean <= 0.0 {
        return (0.0, 0.0);
    }
    let v = mean.powf(1.0 / p);
    (v, v / (p * mean) * (var / ys.len() as f64).sqrt())
}

/// Empirical check of `‖Σ ξ_j‖ <= 2 ‖Σ r_j ξ_j‖` and, for `p = q = 2`, of
/// `‖Σ ξ_j‖ <= 2 (Σ ‖ξ_j‖^2)^{1/2}` for independent centered `ξ_1..ξ_k`
/// in `R^d`. `sampler(j, u)` draws `ξ_j` from the uniforms `u`.
pub fn rademacher_sum_check<S>(sampler: &S, k: usize, d: usize, p: f64, q: f64, trials: usize, stream: &RngStream) -> Result<RademacherReport>
where
    S: Fn(usize, &mut Uniforms) -> Vec<f64> + Sync,
{
    if k == 0 || d == 0 || trials < 2 {
        return Err(Error::invalid("need k >= 1, d >= 1 and trials >= 2"));
    }
    if !(p >= 1.0) || !(q >= 1.0) || !p.is_finite() || !q.is_finite() {
        return Err(Error::invalid("need p, q >= 1"));
    }
    // per trial: |Σξ|^p, |Σrξ|^p, |ξ_j|^p (k values), ξ_j coordinates (k·d values)
    let width = 2 + k + k * d;
    let rows: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = stream.derive("rademacher_trial", t as u64);
            let mut u = s.derive("xi", 0).uniforms();
            let mut signs = s.derive("signs", 0).uniforms();
            let mut row = vec![0.0; width];
            let mut plain = vec![0.0; d];
            let mut randomized = vec![0.0; d];
            for j in 0..k {
                let xi = sampler(j, &mut u);
                assert_eq!(xi.len(), d, "sampler returned a vector of the wrong dimension");
                let r = signs.next_sign();
                for c in 0..d {
                    plain[c] += xi[c];
                    randomized[c] += r * xi[c];
                }
                row[2 + j] = euclidean(&xi).powf(p);
                row[2 + k + j * d..2 + k + (j + 1) * d].copy_from_slice(&xi);
            }
            row[0] = euclidean(&plain).powf(p);
            row[1] = euclidean(&randomized).powf(p);
            row
        })
        .collect();
    let column = |c: usize| -> Vec<f64> { rows.iter().map(|r| r[c]).collect() };

    // centering: every coordinate mean within 6 standard errors of zero
    for c in 2 + k..width {
        let (mean, var) = mean_and_variance(&column(c));
        let se = (var / trials as f64).sqrt();
        if mean.abs() > 6.0 * se.max(f64::MIN_POSITIVE) && mean.abs() > 1e-12 {
            let j = (c - 2 - k) / d;
            return Err(Error::ContractViolation(format!(
                "xi_{} is not centered (coordinate mean {mean:.3e}, std error {se:.3e})",
                j + 1
            )));
        }
    }

    let (sum_norm, sum_norm_se) = root_moment(&column(0), p);
    let (randomized_norm, randomized_norm_se) = root_moment(&column(1), p);
    let per: Vec<(f64, f64)> = (0..k).map(|j| root_moment(&column(2 + j), p)).collect();
    let qsum: f64 = per.iter().map(|(v, _)| v.powf(q)).sum();
    let individual_norm = qsum.powf(1.0 / q);
    // d/dv_j (Σ v^q)^{1/q} = (v_j / total)^{q−1}
    let individual_norm_se = if individual_norm > 0.0 {
        per.iter()
            .map(|(v, se)| ((v / individual_norm).powf(q - 1.0) * se).powi(2))
            .sum::<f64>()
            .sqrt()
    } else {
        0.0
    };
    let randomisation_holds = sum_norm <= 2.0 * randomized_norm + 4.0 * sum_norm_se.hypot(2.0 * randomized_norm_se);
    let hilbert_type_holds = (p == 2.0 && q == 2.0)
        .then(|| sum_norm <= 2.0 * individual_norm + 4.0 * sum_norm_se.hypot(2.0 * individual_norm_se));
    Ok(RademacherReport {
        k,
        d,
        p,
        q,
        trials,
        sum_norm,
        sum_norm_se,
        randomized_norm,
        randomized_norm_se,
        individual_norm,
        individual_norm_se,
        randomisation_holds,
        hilbert_type_holds,
    })
}

/// `ξ_j ~ N(0, I_d)`.
pub fn gaussian_vector_sampler(d: usize) -> impl Fn(usize, &mut Uniforms) -> Vec<f64> + Sync {
    move |_j, u| (0..d).map(|_| inverse_normal_cdf(u.next_open01())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcExperimentConfig {
    pub levels: Vec<usize>,
    pub n0: usize,
    pub p: f64,
    /// Exponent of the discrete `C^γ` error norm.
    pub gamma: f64,
    /// Declared strong rate `ρ` of the level sampler.
    pub rho: f64,
    /// Declared Hölder exponent of the functional's domain norm.
    pub alpha: f64,
    /// Declared path regularity `β`.
    pub beta: f64,
    pub repetitions: usize,
    pub reference_samples: usize,
    /// Reference resolution as a multiple of `N_L`.
    pub reference_factor: usize,
    pub seed: u64,
}

impl Default for MlmcExperimentConfig {
    fn default() -> Self {
        Self {
            levels: (2..=7).collect(),
            n0: 1,
            p: 2.0,
            gamma: 0.0,
            rho: 0.4,
            alpha: 0.1,
            beta: 0.5,
            repetitions: 50,
            reference_samples: 1 << 16,
            reference_factor: 4,
            seed: 0,
        }
    }
}

/// One line of `mlmc_conv.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcConvRow {
    #[serde(rename = "L")]
    pub levels: usize,
    pub p: f64,
    pub gamma: f64,
    pub error: f64,
    pub stderr: f64,
    pub cost: f64,
    pub ref_error: f64,
}

/// One line of `mlmc_levels.csv` (statistics of the first repetition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcLevelRow {
    #[serde(rename = "L")]
    pub levels: usize,
    pub level: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub corr_mean: f64,
    pub corr_var: f64,
}

/// Plain Monte Carlo at `N_L` with the MLMC budget of the largest `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualCostComparison {
    #[serde(rename = "L")]
    pub levels: usize,
    pub cost: f64,
    pub plain_samples: usize,
    pub mlmc_error: f64,
    pub mlmc_stderr: f64,
    pub plain_error: f64,
    pub plain_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct MlmcExperimentOutcome {
    pub rows: Vec<MlmcConvRow>,
    pub levels: Vec<MlmcLevelRow>,
    /// Fit of `log₂(error)` against `L`.
    pub fit: RateFit,
    pub comparison: EqualCostComparison,
    /// Set when a reference error is not below a fifth of the smallest
    /// measured error.
    pub inconclusive: bool,
}

const REFERENCE_BATCHES: usize = 16;

/// Reference mean of `g(Y^{N_ref})` on `out_grid` with a batch-means
/// estimate of its own error in `norm`.
fn reference_mean(
    problem: &SdeProblem,
    g: &PathFunctional,
    n_ref: usize,
    out_grid: &Partition,
    samples: usize,
    norm: DiscreteNorm,
    stream: &RngStream,
) -> Result<(SampledPath, f64)> {
    let fine = Partition::uniform(n_ref, problem.horizon)?;
    let batch = samples.div_ceil(REFERENCE_BATCHES);
    let mut batch_means = Vec::with_capacity(REFERENCE_BATCHES);
    for b in 0..REFERENCE_BATCHES {
        let lo = b * batch;
        let count = batch.min(samples.saturating_sub(lo));
        if count == 0 {
            break;
        }
        let sampler = |k: usize| -> Result<SampledPath> {
            let s = stream.derive("replica", (lo + k) as u64);
            let w = sample_brownian(&fine, problem.m, &s)?;
            g.apply(&euler_maruyama(problem, n_ref, &w)?.restrict(out_grid)?)
        };
        let (sum, _) = accumulate_paths(count, out_grid, problem.d, DiscreteNorm::Sup, sampler)?;
        batch_means.push((sum, count));
    }
    let total: Vec<f64> = pairwise_sum_vectors(&batch_means.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());
    let mean = SampledPath::new(out_grid.clone(), total.iter().map(|v| v / samples as f64).collect(), problem.d)?;
    let nb = batch_means.len();
    let mut sq = Vec::with_capacity(nb);
    for (s, c) in &batch_means {
        let bm = SampledPath::new(out_grid.clone(), s.iter().map(|v| v / *c as f64).collect(), problem.d)?;
        sq.push(norm.eval(&bm.sub(&mean)?)?.powi(2));
    }
    let err = if nb > 1 {
        (pairwise_sum(&sq) / (nb * (nb - 1)) as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok((mean, err))
}

/// `L^p`-over-repetitions error of the multilevel estimator against a
/// high-accuracy reference, for each `L`, with an equal-cost plain Monte
/// Carlo comparison at the largest `L`.
pub fn mlmc_convergence_experiment(
    problem: &SdeProblem,
    g: &PathFunctional,
    cfg: &MlmcExperimentConfig,
) -> Result<MlmcExperimentOutcome> {
    if !(cfg.gamma >= 0.0 && cfg.gamma < cfg.alpha) {
        return Err(Error::invalid(format!(
            "need 0 <= gamma < alpha, got gamma = {}, alpha = {}",
            cfg.gamma, cfg.alpha
        )));
    }
    if !(cfg.alpha < cfg.beta && cfg.beta <= 1.0) {
        return Err(Error::invalid("need alpha < beta <= 1"));
    }
    if cfg.levels.is_empty() || cfg.levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("levels must be a nonempty increasing list"));
    }
    if cfg.repetitions < 2 || cfg.reference_samples < 2 * REFERENCE_BATCHES || cfg.reference_factor == 0 {
        return Err(Error::invalid("need repetitions >= 2, reference_samples >= 32, reference_factor >= 1"));
    }
    if !(cfg.p >= 1.0) || !cfg.p.is_finite() {
        return Err(Error::invalid("p must be >= 1"));
    }
    let norm = DiscreteNorm::Holder(cfg.gamma);
    let root = RngStream::new(cfg.seed).derive("mlmc_experiment", 0);
    let sampler = sde_level_sampler(problem);

    let run = |levels: usize| -> Result<(MlmcConvRow, Vec<MlmcLevelRow>, Vec<f64>)> {
        let schedule = geometric_schedule(levels, cfg.n0)?;
        let n_l = schedule.resolutions()[levels];
        let out_grid = Partition::uniform(n_l, problem.horizon)?;
        let (reference, ref_error) = reference_mean(
            problem,
            g,
            cfg.reference_factor * n_l,
            &out_grid,
            cfg.reference_samples,
            norm,
            &root.derive("reference", levels as u64),
        )?;
        let mut errors = Vec::with_capacity(cfg.repetitions);
        let mut level_rows = Vec::new();
        for r in 0..cfg.repetitions {
            let rep_root = root.derive("L", levels as u64).derive("repetition", r as u64);
            let est = mlmc_mean(&sampler, &schedule, g, norm, problem.horizon, &rep_root)?;
            if r == 0 {
                level_rows = est
                    .per_level
                    .iter()
                    .map(|s| MlmcLevelRow {
                        levels,
                        level: s.level,
                        n: s.n,
                        m: s.m,
                        corr_mean: s.correction_norm_mean,
                        corr_var: s.correction_norm_var,
                    })
                    .collect();
            }
            errors.push(norm.eval(&est.mean_path.sub(&reference)?)?);
        }
        let powered: Vec<f64> = errors.iter().map(|e| e.powf(cfg.p)).collect();
        let (error, stderr) = root_moment(&powered, cfg.p);
        Ok((
            MlmcConvRow {
                levels,
                p: cfg.p,
                gamma: cfg.gamma,
                error,
                stderr,
                cost: schedule.total_cost(),
                ref_error,
            },
            level_rows,
            vec![],
        ))
    };

    let mut rows = Vec::with_capacity(cfg.levels.len());
    let mut levels_out = Vec::new();
    for &l in &cfg.levels {
        let (row, lv, _) = run(l)?;
        rows.push(row);
        levels_out.extend(lv);
    }

    // equal-cost plain Monte Carlo at the largest L
    let l_max = *cfg.levels.last().unwrap();
    let schedule = geometric_schedule(l_max, cfg.n0)?;
    let n_l = schedule.resolutions()[l_max];
    let plain_samples = ((schedule.total_cost() / n_l as f64).floor() as usize).max(1);
    let out_grid = Partition::uniform(n_l, problem.horizon)?;
    let (reference, _) = reference_mean(
        problem,
        g,
        cfg.reference_factor * n_l,
        &out_grid,
        cfg.reference_samples,
        norm,
        &root.derive("reference", l_max as u64),
    )?;
    let plain_sampler = |s: &RngStream| -> Result<SampledPath> {
        let w = sample_brownian(&out_grid, problem.m, s)?;
        g.apply(&euler_maruyama(problem, n_l, &w)?)
    };
    let mut plain_errors = Vec::with_capacity(cfg.repetitions);
    for r in 0..cfg.repetitions {
        let s = root.derive("plain", l_max as u64).derive("repetition", r as u64);
        let (_, err) = mc_mean(&plain_sampler, plain_samples, norm, &s, Some(&reference))?;
        plain_errors.push(err.expect("reference supplied").powf(cfg.p));
    }
    let (plain_error, plain_stderr) = root_moment(&plain_errors, cfg.p);
    let last = rows.last().unwrap();
    let comparison = EqualCostComparison {
        levels: l_max,
        cost: schedule.total_cost(),
        plain_samples,
        mlmc_error: last.error,
        mlmc_stderr: last.stderr,
        plain_error,
        plain_stderr,
    };

    let min_error = rows.iter().map(|r| r.error).fold(f64::INFINITY, f64::min);
    let inconclusive = rows.iter().any(|r| r.ref_error >= 0.2 * min_error);
    let xs: Vec<f64> = rows.iter().map(|r| 2f64.powi(r.levels as i32)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_rate(&xs, &ys)?;
    Ok(MlmcExperimentOutcome {
        rows,
        levels: levels_out,
        fit,
        comparison,
        inconclusive,
    })
}

/// Average of independent multilevel estimates next to a plain Monte Carlo
/// mean at `N_L`, both on the output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCheck {
    pub estimates: usize,
    pub plain_samples: usize,
    /// `sup_t |mlmc average − plain mean|`.
    pub sup_difference: f64,
    /// `sup_t` of the combined standard error of the two means.
    pub combined_stderr: f64,
    pub within_three_stderr: bool,
}

pub fn mlmc_bias_check(
    problem: &SdeProblem,
    g: &PathFunctional,
    levels: usize,
    n0: usize,
    estimates: usize,
    plain_samples: usize,
    seed: u64,
) -> Result<BiasCheck> {
    if estimates < 2 || plain_samples < 2 {
        return Err(Error::invalid("need at least 2 estimates and 2 plain samples"));
    }
    let schedule = geometric_schedule(levels, n0)?;
    let n_l = schedule.resolutions()[levels];
    let out_grid = Partition::uniform(n_l, problem.horizon)?;
    let root = RngStream::new(seed).derive("mlmc_bias", 0);
    let sampler = sde_level_sampler(problem);
    let width = out_grid.len() * problem.d;

    let ests: Vec<Vec<f64>> = (0..estimates)
        .map(|r| {
            mlmc_mean(&sampler, &schedule, g, DiscreteNorm::Sup, problem.horizon, &root.derive("estimate", r as u64))
                .map(|e| e.mean_path.into_values())
        })
        .collect::<Result<_>>()?;
    let plain_root = root.derive("plain", 0);
    let plain: Vec<Vec<f64>> = (0..plain_samples)
        .into_par_iter()
        .map(|k| {
            let w = sample_brownian(&out_grid, problem.m, &plain_root.derive("replica", k as u64))?;
            Ok(g.apply(&euler_maruyama(problem, n_l, &w)?)?.into_values())
        })
        .collect::<Result<_>>()?;

    let mut sup_difference = 0.0f64;
    let mut combined_stderr = 0.0f64;
    for c in 0..width {
        let a: Vec<f64> = ests.iter().map(|e| e[c]).collect();
        let b: Vec<f64> = plain.iter().map(|e| e[c]).collect();
        let (ma, va) = mean_and_variance(&a);
        let (mb, vb) = mean_and_variance(&b);
        sup_difference = sup_difference.max((ma - mb).abs());
        combined_stderr = combined_stderr.max((va / estimates as f64 + vb / plain_samples as f64).sqrt());
    }
    Ok(BiasCheck {
        estimates,
        plain_samples,
        sup_difference,
        combined_stderr,
        within_three_stderr: sup_difference <= 3.0 * combined_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_schedule_examples() {
        let s = geometric_schedule(0, 3).unwrap();
        assert_eq!((s.resolutions(), s.samples()), (&[3][..], &[1][..]));
        let s = geometric_schedule(3, 1).unwrap();
        assert_eq!(s.resolutions(), &[1, 2, 4, 8]);
        assert_eq!(s.samples(), &[8, 4, 2, 1]);
        for (l, n0) in [(0, 1), (3, 1), (5, 3), (7, 2)] {
            let s = geometric_schedule(l, n0).unwrap();
            assert_eq!(s.total_cost(), (n0 * (l + 1) * (1 << l)) as f64);
        }
        assert!(geometric_schedule(2, 0).is_err());
        assert!(MlmcSchedule::new(vec![2, 3], vec![1, 1]).is_err());
    }

    #[test]
    fn level_sum_closed_forms() {
        assert!((theoretical_level_sum(0.5, 4).unwrap() - 1.0).abs() < 1e-15);
        let v = theoretical_level_sum(0.0, 3).unwrap();
        assert!((v - (0.5 + 0.5f64.sqrt() + 1.0)).abs() < 1e-14);
        for i in 0..=10 {
            let rho = i as f64 / 10.0;
            for l in 1..=12 {
                let closed = theoretical_level_sum(rho, l).unwrap();
                let direct = level_sum_direct(rho, l);
                assert!((closed - direct).abs() <= 1e-12 * direct.max(1.0), "rho {rho}, L {l}");
            }
        }
        assert!(theoretical_level_sum(0.3, 0).is_err());
    }

    #[test]
    fn mc_mean_of_deterministic_sampler_is_exact() {
        let grid = Partition::uniform(4, 1.0).unwrap();
        let path = SampledPath::from_fn(grid, 1, |t| vec![t * t]).unwrap();
        let sampler = |_s: &RngStream| Ok(path.clone());
        let (mean, err) = mc_mean(&sampler, 7, DiscreteNorm::Sup, &RngStream::new(1), Some(&path)).unwrap();
        // 7 equal summands divided by 7 may round; compare to 1 ulp
        for (a, b) in mean.values().iter().zip(path.values()) {
            assert!((a - b).abs() <= f64::EPSILON * b.abs());
        }
        assert!(err.unwrap() <= 1e-15);
    }

    #[test]
    fn mc_mean_variance_of_scalar_gaussian() {
        let grid = Partition::uniform(1, 1.0).unwrap();
        let (mu, sigma, m) = (0.7, 2.0, 16);
        let sampler = |s: &RngStream| {
            let z = s.normals().next_normal();
            SampledPath::new(grid.clone(), vec![mu + sigma * z, 0.0], 1)
        };
        let reference = SampledPath::new(grid.clone(), vec![mu, 0.0], 1).unwrap();
        let reps = 1000;
        let sq: Vec<f64> = (0..reps)
            .map(|r| {
                let (_, e) = mc_mean(&sampler, m, DiscreteNorm::Sup, &RngStream::new(5).derive("rep", r), Some(&reference)).unwrap();
                e.unwrap().powi(2)
            })
            .collect();
        let mse = sq.iter().sum::<f64>() / reps as f64;
        let want = sigma * sigma / m as f64;
        assert!((mse - want).abs() < 0.1 * want, "mse {mse} vs {want}");
    }

    #[test]
    fn level_zero_collapses_to_plain_mc() {
        let p = SdeProblem::brownian_motion(0.0, 1.0).unwrap();
        let root = RngStream::new(3);
        let schedule = MlmcSchedule::new(vec![8], vec![40]).unwrap();
        let est = mlmc_mean(&sde_level_sampler(&p), &schedule, &PathFunctional::identity(0.1), DiscreteNorm::Sup, 1.0, &root)
            .unwrap();
        let grid = Partition::uniform(8, 1.0).unwrap();
        let plain = |s: &RngStream| {
            let w = sample_brownian(&grid, 1, s)?;
            euler_maruyama(&p, 8, &w)
        };
        let (mean, _) = mc_mean(&plain, 40, DiscreteNorm::Sup, &root.derive("mlmc", 0), None).unwrap();
        assert_eq!(est.mean_path, mean);
    }

    #[test]
    fn resolution_blind_sampler_telescopes_exactly() {
        let grid = Partition::uniform(16, 1.0).unwrap();
        let blind = |_req: &LevelRequest, s: &RngStream| -> Result<LevelSample> {
            let path = sample_brownian(&grid, 1, s)?;
            Ok(LevelSample {
                fine: path.clone(),
                fine_driver: s.fingerprint(),
                coarse: _req.n_coarse.map(|_| (path, s.fingerprint())),
            })
        };
        let schedule = MlmcSchedule::new(vec![2, 4, 8, 16], vec![8, 4, 2, 1]).unwrap();
        let root = RngStream::new(8);
        let g = PathFunctional::saturating(0.2);
        let est = mlmc_mean(&blind, &schedule, &g, DiscreteNorm::Holder(0.1), 1.0, &root).unwrap();
        let level0 = |s: &RngStream| g.apply(&sample_brownian(&grid, 1, s)?);
        let (mean, _) = mc_mean(&level0, 8, DiscreteNorm::Sup, &root.derive("mlmc", 0), None).unwrap();
        assert_eq!(est.mean_path, mean);
        for s in &est.per_level[1..] {
            assert_eq!((s.correction_norm_mean, s.correction_norm_var), (0.0, 0.0));
        }
        assert_eq!(est.total_cost, 2.0 * 8.0 + 4.0 * 4.0 + 8.0 * 2.0 + 16.0);
    }

    #[test]
    fn decoupled_pairs_are_rejected() {
        let decoupled = |req: &LevelRequest, s: &RngStream| -> Result<LevelSample> {
            let grid = Partition::uniform(req.n_fine, 1.0)?;
            let fine = sample_brownian(&grid, 1, s)?;
            let other = s.derive("other", 0);
            let coarse = req.n_coarse.map(|_| (sample_brownian(&grid, 1, &other).unwrap(), other.fingerprint()));
            Ok(LevelSample {
                fine,
                fine_driver: s.fingerprint(),
                coarse,
            })
        };
        let schedule = geometric_schedule(2, 1).unwrap();
        let res = mlmc_mean(&decoupled, &schedule, &PathFunctional::identity(0.1), DiscreteNorm::Sup, 1.0, &RngStream::new(1));
        assert!(matches!(res, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn saturating_functional_lipschitz_witness() {
        let grid = Partition::uniform(16, 1.0).unwrap();
        for dim in [1, 2] {
            for alpha in [0.0, 0.3, 0.7] {
                let g = PathFunctional::saturating(alpha);
                let worst = g.lipschitz_spot_check(&grid, dim, 300, &RngStream::new(2)).unwrap();
                assert!(worst <= g.lipschitz_c, "dim {dim}, alpha {alpha}: {worst}");
            }
        }
    }

    #[test]
    fn rademacher_checks_hold_and_detect_bias() {
        let s = RngStream::new(4);
        let r = rademacher_sum_check(&gaussian_vector_sampler(3), 8, 3, 2.0, 2.0, 20_000, &s).unwrap();
        assert!(r.randomisation_holds && r.hilbert_type_holds == Some(true));
        // orthogonality: ‖Σξ‖² = Σ‖ξ‖² for independent centered ξ
        assert!((r.sum_norm - r.individual_norm).abs() < 4.0 * r.sum_norm_se.hypot(r.individual_norm_se));
        let single = rademacher_sum_check(&gaussian_vector_sampler(2), 1, 2, 3.0, 2.0, 20_000, &s).unwrap();
        assert!((single.sum_norm - single.randomized_norm).abs() < 3.0 * single.sum_norm_se.hypot(single.randomized_norm_se));
        assert!(single.hilbert_type_holds.is_none());
        let shifted = |_j: usize, u: &mut Uniforms| vec![1.0 + inverse_normal_cdf(u.next_open01())];
        assert!(matches!(
            rademacher_sum_check(&shifted, 4, 1, 2.0, 2.0, 5_000, &s),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn experiment_rejects_gamma_at_or_above_alpha() {
        let p = SdeProblem::brownian_motion(0.0, 1.0).unwrap();
        let cfg = MlmcExperimentConfig {
            gamma: 0.1,
            alpha: 0.1,
            ..MlmcExperimentConfig::default()
        };
        assert!(mlmc_convergence_experiment(&p, &PathFunctional::identity(0.1), &cfg).is_err());
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let p = SdeProblem::brownian_motion(0.0, 1.0).unwrap();
        let cfg = MlmcExperimentConfig {
            levels: vec![1, 2, 3],
            repetitions: 4,
            reference_samples: 256,
            ..MlmcExperimentConfig::default()
        };
        let g = PathFunctional::identity(0.1);
        let a = mlmc_convergence_experiment(&p, &g, &cfg).unwrap();
        let b = mlmc_convergence_experiment(&p, &g, &cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.levels.len(), 2 + 3 + 4);
        assert_eq!(a.comparison.plain_samples, 4);
    }
}
