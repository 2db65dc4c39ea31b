//! Executable checkers for the deterministic Hölder interpolation
//! inequalities. Every checker returns both sides so callers can assert
//! `lhs <= rhs`; all seminorms of one checker are evaluated on the same
//! refined grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_paths::{DistanceBand, HolderEvaluator, Partition, SampledPath};
use crate::stochastic_schemes::RngStream;

pub const TOL_ABS: f64 = 1e-12;
pub const TOL_REL: f64 = 1e-12;

/// Both sides of one inequality instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

impl InequalityReport {
    pub fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Self::with_tolerance(name, lhs, rhs, TOL_ABS, TOL_REL)
    }

    pub fn with_tolerance(name: &str, lhs: f64, rhs: f64, tol_abs: f64, tol_rel: f64) -> Self {
        let slack = rhs - lhs;
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            slack,
            holds: slack >= -(tol_abs + tol_rel * rhs.abs()),
        }
    }
}

fn check_exponent(name: &str, r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {r}")));
    }
    Ok(())
}

fn check_ordered(alpha: f64, beta: f64) -> Result<()> {
    check_exponent("alpha", alpha)?;
    check_exponent("beta", beta)?;
    if alpha > beta {
        return Err(Error::invalid(format!("need alpha <= beta, got {alpha} > {beta}")));
    }
    Ok(())
}

fn check_theta(path: &SampledPath, theta: &Partition) -> Result<()> {
    if !theta.is_nested_in(path.grid()) {
        return Err(Error::invalid("theta must be nested in the path grid"));
    }
    Ok(())
}

fn check_same_grid(f: &SampledPath, g: &SampledPath) -> Result<()> {
    if f.grid() != g.grid() || f.dim() != g.dim() {
        return Err(Error::invalid("paths must share grid and state dimension"));
    }
    Ok(())
}

fn seminorm(path: &SampledPath, r: f64, band: DistanceBand) -> Result<f64> {
    let eval = HolderEvaluator::new(path.grid(), r, band)?;
    Ok(eval.seminorm(path.values(), path.dim()))
}

/// `sup_{t∈θ} ‖f(t) − g(t)‖` for paths on a common grid containing `θ`.
fn sup_distance_on(f: &SampledPath, g: &SampledPath, theta: &Partition) -> Result<f64> {
    let idx = theta.embedding_in(f.grid())?;
    Ok(idx
        .into_iter()
        .map(|i| crate::grid_paths::euclidean_distance(f.value(i), g.value(i)))
        .fold(0.0, f64::max))
}

/// Restricted-band interpolation inequality, in its two band splittings:
/// `(c,∞) / (0,c]` and `[c,∞) / (0,c)`.
pub fn interpolation_inequality(
    path: &SampledPath,
    c: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    oversample: usize,
) -> Result<(InequalityReport, InequalityReport)> {
    check_ordered(alpha, beta)?;
    check_ordered(beta, gamma)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    let f = path.refine(oversample)?;
    let lhs = seminorm(&f, beta, DistanceBand::Full)?;
    let low = c.powf(alpha - beta);
    let high = c.powf(gamma - beta);
    let rhs_open = (low * seminorm(&f, alpha, DistanceBand::Above(c))?)
        .max(high * seminorm(&f, gamma, DistanceBand::AtMost(c))?);
    let rhs_closed = (low * seminorm(&f, alpha, DistanceBand::AtLeast(c))?)
        .max(high * seminorm(&f, gamma, DistanceBand::Below(c))?);
    Ok((
        InequalityReport::new("interpolation_inequality_open_far", lhs, rhs_open),
        InequalityReport::new("interpolation_inequality_closed_far", lhs, rhs_closed),
    ))
}

/// `sup ‖f − [f]_θ‖ <= (d_max(θ)/2)^α |f|_{C^α}`.
pub fn affine_error_bound(
    path: &SampledPath,
    theta: &Partition,
    alpha: f64,
    oversample: usize,
) -> Result<InequalityReport> {
    check_exponent("alpha", alpha)?;
    check_theta(path, theta)?;
    let f = path.refine(oversample)?;
    let lhs = f.sub(&f.interpolant_on(theta)?)?.sup_norm();
    let rhs = (0.5 * theta.d_max()).powf(alpha) * seminorm(&f, alpha, DistanceBand::Full)?;
    Ok(InequalityReport::new("affine_error_bound", lhs, rhs))
}

/// Hölder distance of two paths from their distance on `θ` plus their
/// `β`-regularity; seminorm and full-norm versions.
pub fn grid_difference_bound(
    f: &SampledPath,
    g: &SampledPath,
    theta: &Partition,
    alpha: f64,
    beta: f64,
    oversample: usize,
) -> Result<(InequalityReport, InequalityReport)> {
    check_same_grid(f, g)?;
    check_ordered(alpha, beta)?;
    check_theta(f, theta)?;
    let fr = f.refine(oversample)?;
    let gr = g.refine(oversample)?;
    let diff = fr.sub(&gr)?;
    let semi = seminorm(&diff, alpha, DistanceBand::Full)?;
    let d = theta.d_max();
    let bracket = sup_distance_on(&fr, &gr, theta)?
        + d.powf(beta) / 2f64.powf(beta)
            * (seminorm(&fr, beta, DistanceBand::Full)? + seminorm(&gr, beta, DistanceBand::Full)?);
    let pre = 2.0 / d.powf(alpha);
    Ok((
        InequalityReport::new("grid_difference_seminorm", semi, pre * bracket),
        InequalityReport::new("grid_difference_norm", diff.sup_norm() + semi, (pre + 1.0) * bracket),
    ))
}

/// Short-distance seminorm of `[f]_θ` from its largest jump on `θ`.
pub fn interpolant_band_seminorm_bound(
    f: &SampledPath,
    theta: &Partition,
    alpha: f64,
    c: f64,
    oversample: usize,
) -> Result<InequalityReport> {
    check_exponent("alpha", alpha)?;
    check_theta(f, theta)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    let coarse = f.restrict(theta)?;
    let max_jump = (1..coarse.len())
        .map(|j| crate::grid_paths::euclidean_distance(coarse.value(j), coarse.value(j - 1)))
        .fold(0.0, f64::max);
    let interp = f.refine(oversample)?.interpolant_on(theta)?;
    let lhs = seminorm(&interp, alpha, DistanceBand::AtMost(c))?;
    let rhs = c.powf(1.0 - alpha) / theta.d_min() * max_jump;
    Ok(InequalityReport::new("interpolant_band_seminorm_bound", lhs, rhs))
}

/// `|[f]_θ|_{C^α} <= |f|_{C^α}`.
pub fn interpolant_seminorm_contraction(
    f: &SampledPath,
    theta: &Partition,
    alpha: f64,
    oversample: usize,
) -> Result<InequalityReport> {
    check_exponent("alpha", alpha)?;
    check_theta(f, theta)?;
    let fr = f.refine(oversample)?;
    let lhs = seminorm(&fr.interpolant_on(theta)?, alpha, DistanceBand::Full)?;
    let rhs = seminorm(&fr, alpha, DistanceBand::Full)?;
    Ok(InequalityReport::new("interpolant_seminorm_contraction", lhs, rhs))
}

/// Distance between `f` and the interpolant `[g]_θ`; seminorm and full-norm
/// versions.
pub fn affine_target_bound(
    f: &SampledPath,
    g: &SampledPath,
    theta: &Partition,
    alpha: f64,
    beta: f64,
    oversample: usize,
) -> Result<(InequalityReport, InequalityReport)> {
    check_same_grid(f, g)?;
    check_ordered(alpha, beta)?;
    check_theta(f, theta)?;
    let fr = f.refine(oversample)?;
    let gr = g.refine(oversample)?;
    let diff = fr.sub(&gr.interpolant_on(theta)?)?;
    let semi = seminorm(&diff, alpha, DistanceBand::Full)?;
    let (d_max, d_min) = theta.mesh_stats();
    let on_grid = sup_distance_on(&fr, &gr, theta)?;
    let f_beta = seminorm(&fr, beta, DistanceBand::Full)?;
    let grid_factor = 2.0 * d_max.powf(1.0 - alpha) / d_min;
    let rhs_semi = grid_factor * on_grid + 2.0 * d_max.powf(beta - alpha) * f_beta;
    let rhs_norm = (grid_factor + 1.0) * on_grid
        + (2.0 / d_max.powf(alpha) + 2f64.powf(-beta)) * d_max.powf(beta) * f_beta;
    Ok((
        InequalityReport::new("affine_target_seminorm", semi, rhs_semi),
        InequalityReport::new("affine_target_norm", diff.sup_norm() + semi, rhs_norm),
    ))
}

/// Random input generator parameters for [`run_inequality_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Inclusive range of grid sizes (number of points).
    pub min_points: usize,
    pub max_points: usize,
    /// State dimensions drawn uniformly.
    pub dims: Vec<usize>,
    pub horizon: f64,
    pub oversample: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            min_points: 3,
            max_points: 33,
            dims: vec![1, 3],
            horizon: 1.0,
            oversample: 4,
        }
    }
}

impl SuiteConfig {
    fn validate(&self) -> Result<()> {
        if self.min_points < 2 || self.max_points < self.min_points {
            return Err(Error::invalid("need 2 <= min_points <= max_points"));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::invalid("dims must be a nonempty list of positive integers"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon must be positive"));
        }
        if self.oversample == 0 {
            return Err(Error::invalid("oversample must be >= 1"));
        }
        Ok(())
    }
}

/// One randomly generated admissible input set.
#[derive(Debug, Clone)]
pub struct TrialInputs {
    pub f: SampledPath,
    pub g: SampledPath,
    pub theta: Partition,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Threshold for the band-splitting inequality: `d_max` of the path grid or `T/2`.
    pub c_split: f64,
    /// Threshold for the short-distance bound: `d_max(θ)` or `2 d_max(θ)`.
    pub c_band: f64,
}

/// Regenerates the inputs of the trial identified by `trial_seed`.
pub fn trial_inputs(trial_seed: u64, config: &SuiteConfig) -> Result<TrialInputs> {
    config.validate()?;
    let mut u = RngStream::new(trial_seed).uniforms();
    let t = config.horizon;
    let n_points = u.next_range(config.min_points as u64, config.max_points as u64) as usize;
    let mut points = vec![0.0, t];
    while points.len() < n_points {
        let x = t * u.next_open01();
        if !points.contains(&x) {
            points.push(x);
        }
    }
    points.sort_by(f64::total_cmp);
    let grid = Partition::new(points)?;
    let dim = config.dims[u.next_range(0, config.dims.len() as u64 - 1) as usize];
    let mut random_path = || {
        let values = (0..grid.len() * dim).map(|_| u.next_symmetric()).collect();
        SampledPath::new(grid.clone(), values, dim)
    };
    let f = random_path()?;
    let g = random_path()?;

    let pts = grid.points();
    let mut sub = vec![pts[0]];
    for &x in &pts[1..pts.len() - 1] {
        if u.next_sign() > 0.0 {
            sub.push(x);
        }
    }
    sub.push(t);
    let theta = Partition::new(sub)?;

    let mut exps = [u.next_open01(), u.next_open01(), u.next_open01()];
    match u.next_range(0, 7) {
        // exercise the exponent ties and the endpoints explicitly
        0 => exps = [exps[0]; 3],
        1 => exps[0] = 0.0,
        2 => exps[2] = 1.0,
        _ => {}
    }
    exps.sort_by(f64::total_cmp);
    let c_split = if u.next_sign() > 0.0 { grid.d_max() } else { 0.5 * t };
    let c_band = if u.next_sign() > 0.0 {
        theta.d_max()
    } else {
        2.0 * theta.d_max()
    };
    Ok(TrialInputs {
        f,
        g,
        theta,
        alpha: exps[0],
        beta: exps[1],
        gamma: exps[2],
        c_split,
        c_band,
    })
}

/// Runs every checker on one input set.
pub fn check_all(inputs: &TrialInputs, oversample: usize) -> Result<Vec<InequalityReport>> {
    let TrialInputs {
        f,
        g,
        theta,
        alpha,
        beta,
        gamma,
        c_split,
        c_band,
    } = inputs;
    let mut out = Vec::with_capacity(9);
    let (a, b) = interpolation_inequality(f, *c_split, *alpha, *beta, *gamma, oversample)?;
    out.extend([a, b]);
    out.push(affine_error_bound(f, theta, *alpha, oversample)?);
    let (a, b) = grid_difference_bound(f, g, theta, *alpha, *beta, oversample)?;
    out.extend([a, b]);
    out.push(interpolant_band_seminorm_bound(f, theta, *alpha, *c_band, oversample)?);
    out.push(interpolant_seminorm_contraction(f, theta, *alpha, oversample)?);
    let (a, b) = affine_target_bound(f, g, theta, *alpha, *beta, oversample)?;
    out.extend([a, b]);
    Ok(out)
}

/// Aggregate over the trials of one inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityStats {
    pub trials: usize,
    pub failures: usize,
    pub worst_slack: f64,
    pub example_seed_of_worst: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub inequalities: BTreeMap<String, InequalityStats>,
}

impl SuiteReport {
    pub fn total_failures(&self) -> usize {
        self.inequalities.values().map(|s| s.failures).sum()
    }
}

/// Seed of trial `index` under master seed `seed`; pass it to
/// [`trial_inputs`] to reproduce that trial.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    RngStream::new(seed).derive("inequality_trial", index as u64).fingerprint()
}

pub fn run_inequality_suite(trials: usize, seed: u64, config: &SuiteConfig) -> Result<SuiteReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    config.validate()?;
    let per_trial: Vec<(u64, Vec<InequalityReport>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = trial_seed(seed, i);
            let inputs = trial_inputs(s, config)?;
            Ok((s, check_all(&inputs, config.oversample)?))
        })
        .collect::<Result<_>>()?;

    let mut inequalities: BTreeMap<String, InequalityStats> = BTreeMap::new();
    for (s, reports) in per_trial {
        for r in reports {
            let entry = inequalities.entry(r.name.clone()).or_insert(InequalityStats {
                trials: 0,
                failures: 0,
                worst_slack: f64::INFINITY,
                example_seed_of_worst: s,
            });
            entry.trials += 1;
            entry.failures += usize::from(!r.holds);
            if r.slack < entry.worst_slack {
                entry.worst_slack = r.slack;
                entry.example_seed_of_worst = s;
            }
        }
    }
    Ok(SuiteReport {
        seed,
        trials,
        inequalities,
    })
}
