//! Spectral Galerkin approximation of a stochastic heat-type evolution
//! equation on a diagonal eigenbasis `dX = (AX + F(X)) dt + B dW`, with an
//! exact second-moment oracle for the linear case and rate experiments.
//!
//! Modes are indexed from 1. A state is the coefficient vector of the first
//! `N` modes; the `H_γ` norm weights mode `n` by `|λ_n|^γ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_paths::{Partition, SampledPath};
use crate::stochastic_schemes::{fit_rate, EstimateKind, NormKind, PairMoments, RateFit, RngStream};
use crate::summation::pairwise_sum_by;

/// Coefficient-wise nonlinearity `F(x)_n = φ_n(x_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Nonlinearity {
    Zero,
    /// `F(x)_n = −rate · x_n`
    Damping { rate: f64 },
    /// `F(x)_n = κ c_n tanh(x_n)` with `c_n = |λ_n|^{α_F} / n`
    Tanh { kappa: f64 },
}

/// Problem data: `λ_n = −lambda_scale · n^{lambda_exponent}`,
/// `b_n = noise_scale · n^{−s}`, regularity parameters and initial value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSeeProblem {
    pub lambda_scale: f64,
    pub lambda_exponent: f64,
    pub noise_scale: f64,
    pub s: f64,
    pub nonlinearity: Nonlinearity,
    /// Smoothing order of `F`: it maps `H_γ` Lipschitz into `H_{γ−α_F}`.
    pub alpha_f: f64,
    pub beta: f64,
    pub chi: f64,
    pub gamma: f64,
    /// Target regularity gain `ϑ`.
    pub theta_target: f64,
    pub iota: f64,
    /// Initial coefficients of modes `1..=x0.len()`; zero beyond.
    pub x0: Vec<f64>,
    pub horizon: f64,
}

impl Default for SpectralSeeProblem {
    fn default() -> Self {
        Self {
            lambda_scale: std::f64::consts::PI * std::f64::consts::PI,
            lambda_exponent: 2.0,
            noise_scale: 1.0,
            s: 0.6,
            nonlinearity: Nonlinearity::Zero,
            alpha_f: 0.25,
            beta: 0.0,
            chi: 0.45,
            gamma: 0.0,
            theta_target: 0.45,
            iota: 2.0,
            x0: Vec::new(),
            horizon: 1.0,
        }
    }
}

/// Exponent below which `e^{-x}` is treated as exactly zero in the tail sums
/// (`e^{-400}` is far below the double-precision resolution of any sum here).
const UNDERFLOW_EXPONENT: f64 = 400.0;
/// Smallest index handed to the Euler–Maclaurin remainder.
const MIN_DIRECT_MODES: usize = 256;
const MAX_DIRECT_MODES: usize = 50_000_000;

impl SpectralSeeProblem {
    /// Linear problem with the default spectrum and noise.
    pub fn linear_default() -> Self {
        Self::default()
    }

    /// Default spectrum and noise with `F(x)_n = 0.5 c_n tanh(x_n)`.
    pub fn semilinear_default() -> Self {
        Self {
            nonlinearity: Nonlinearity::Tanh { kappa: 0.5 },
            ..Self::default()
        }
    }

    /// Checks the structural assumptions: negative spectrum, admissible
    /// exponents, the `ι` spectral-gap condition, trace-class noise in
    /// `H_{γ−β}` and the noise-truncation rate in `H_{γ−χ}`.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda_scale,
            self.lambda_exponent,
            self.noise_scale,
            self.s,
            self.alpha_f,
            self.beta,
            self.chi,
            self.gamma,
            self.theta_target,
            self.iota,
            self.horizon,
        ];
        if finite.iter().any(|x| !x.is_finite()) || self.x0.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("problem parameters must be finite"));
        }
        if !(self.lambda_scale > 0.0 && self.lambda_exponent > 0.0) {
            return Err(Error::invalid("eigenvalues must be strictly negative and nonincreasing"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale must be nonnegative"));
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1/2), got {}", self.beta)));
        }
        if !(self.beta..0.5).contains(&self.chi) {
            return Err(Error::invalid(format!("chi must lie in [beta, 1/2), got {}", self.chi)));
        }
        if !(0.0..1.0).contains(&self.alpha_f) {
            return Err(Error::invalid(format!("alpha_F must lie in [0, 1), got {}", self.alpha_f)));
        }
        let theta_max = (1.0 - self.alpha_f).min(0.5 - self.beta);
        if !(self.theta_target > 0.0 && self.theta_target < theta_max) {
            return Err(Error::invalid(format!(
                "theta_target must lie in (0, {theta_max}), got {}",
                self.theta_target
            )));
        }
        if !(self.iota > 0.0) || self.iota > self.lambda_exponent {
            return Err(Error::invalid(format!(
                "iota must lie in (0, {}] so that N^iota / |lambda_(N+1)| stays bounded",
                self.lambda_exponent
            )));
        }
        match self.nonlinearity {
            Nonlinearity::Damping { rate } if !(rate >= 0.0) || !rate.is_finite() => {
                return Err(Error::invalid("damping rate must be nonnegative"));
            }
            Nonlinearity::Tanh { kappa } if !kappa.is_finite() => {
                return Err(Error::invalid("kappa must be finite"));
            }
            _ => {}
        }
        if self.noise_scale > 0.0 {
            let q = self.lambda_exponent;
            // Σ |λ_n|^{2(γ−β)} b_n² ~ Σ n^{2q(γ−β) − 2s}
            if 2.0 * q * (self.gamma - self.beta) - 2.0 * self.s >= -1.0 {
                return Err(Error::invalid("noise is not Hilbert–Schmidt into H_(gamma - beta)"));
            }
            // N^{ιϑ} (Σ_{n>N} |λ_n|^{2(γ−χ)} b_n²)^{1/2} ~ N^{ιϑ + q(γ−χ) − s + 1/2}
            let rate = self.iota * self.theta_target + q * (self.gamma - self.chi) - self.s + 0.5;
            if rate > 1e-12 {
                return Err(Error::invalid(format!(
                    "noise truncation error decays too slowly for theta_target (excess exponent {rate})"
                )));
            }
            if 2.0 * self.s + q <= 1.0 {
                return Err(Error::invalid("stationary variances b_n^2 / (2 |lambda_n|) must be summable"));
            }
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.nonlinearity, Nonlinearity::Zero)
    }

    /// `λ_n` for `n >= 1`.
    pub fn eigenvalue(&self, n: usize) -> f64 {
        -self.lambda_scale * (n as f64).powf(self.lambda_exponent)
    }

    /// `b_n` for `n >= 1`.
    pub fn noise_coeff(&self, n: usize) -> f64 {
        self.noise_scale * (n as f64).powf(-self.s)
    }

    pub fn x0_coeff(&self, n: usize) -> f64 {
        self.x0.get(n - 1).copied().unwrap_or(0.0)
    }

    /// `N^ι · sup{1/|λ_n| : n > N}`; bounded in `N` under [`validate`](Self::validate).
    pub fn iota_witness(&self, n: usize) -> f64 {
        (n as f64).powf(self.iota) / self.eigenvalue(n + 1).abs()
    }

    /// Weight of mode `n` in the `H_γ` norm.
    pub fn norm_weight(&self, n: usize) -> f64 {
        if self.gamma == 0.0 {
            1.0
        } else {
            self.eigenvalue(n).abs().powf(self.gamma)
        }
    }

    /// `F(x)_n` for mode `n`.
    pub fn nonlinear_term(&self, n: usize, x: f64) -> f64 {
        match self.nonlinearity {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Damping { rate } => -rate * x,
            Nonlinearity::Tanh { kappa } => {
                kappa * self.eigenvalue(n).abs().powf(self.alpha_f) / n as f64 * x.tanh()
            }
        }
    }

    /// Variance of mode `n` at time `t` started from a deterministic value.
    fn variance_at(&self, n: usize, t: f64) -> f64 {
        let b = self.noise_coeff(n);
        let lam = self.eigenvalue(n);
        b * b * -(2.0 * lam * t).exp_m1() / (2.0 * lam.abs())
    }

    /// `Σ_{n>k} b_n²/(2|λ_n|)` by Euler–Maclaurin for the power law
    /// `A x^{−p}`; with `k >= 256` the neglected term is below 1e−20
    /// relative.
    fn stationary_tail_after(&self, k: usize) -> f64 {
        if self.noise_scale == 0.0 {
            return 0.0;
        }
        let p = 2.0 * self.s + self.lambda_exponent;
        let a = self.noise_scale * self.noise_scale / (2.0 * self.lambda_scale);
        let kf = k as f64;
        let f = a * kf.powf(-p);
        let d1 = -p * f / kf;
        let d3 = -p * (p + 1.0) * (p + 2.0) * f / (kf * kf * kf);
        a * kf.powf(1.0 - p) / (p - 1.0) - 0.5 * f - d1 / 12.0 + d3 / 720.0
    }

    /// Smallest mode index beyond which `e^{λ_n τ}` is negligible.
    fn decay_index(&self, tau: f64) -> Result<usize> {
        let n = (UNDERFLOW_EXPONENT / (self.lambda_scale * tau)).powf(1.0 / self.lambda_exponent).ceil();
        if !(n < MAX_DIRECT_MODES as f64) {
            return Err(Error::invalid(format!("time scale {tau} too small for the tail summation")));
        }
        Ok(n as usize)
    }

    /// `Σ_{n>n0} term(n)` where `term(n) → mult · b_n²/(2|λ_n|)` once
    /// `e^{λ_n τ}` underflows.
    fn tail_sum<F: Fn(usize) -> f64>(&self, n0: usize, tau: Option<f64>, mult: f64, term: F) -> Result<f64> {
        let mut k = n0.max(self.x0.len());
        if let Some(tau) = tau.filter(|_| self.noise_scale > 0.0 && mult > 0.0) {
            k = k.max(MIN_DIRECT_MODES).max(self.decay_index(tau)?);
        }
        let direct = pairwise_sum_by(k.saturating_sub(n0), |i| term(n0 + 1 + i));
        let remainder = if mult > 0.0 { mult * self.stationary_tail_after(k) } else { 0.0 };
        Ok(direct + remainder)
    }

    fn require_linear(&self, what: &str) -> Result<()> {
        if !self.is_linear() {
            return Err(Error::Unsupported(format!("{what} requires F = 0")));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::invalid(format!("t must lie in [0, {}], got {t}", self.horizon)));
        }
        Ok(())
    }
}

/// `‖X_t − X^N_t‖_{L²(P; H_γ)}` for the linear equation:
/// `sqrt(Σ_{n>N} |λ_n|^{2γ} (e^{2λ_n t} x0_n² + b_n² (1 − e^{2λ_n t}) / (2|λ_n|)))`.
pub fn exact_linear_second_moment_error(problem: &SpectralSeeProblem, n: usize, t: f64) -> Result<f64> {
    problem.require_linear("the exact second-moment error")?;
    problem.check_time(t)?;
    if problem.gamma != 0.0 {
        return exact_weighted(problem, n, |m| {
            let lam = problem.eigenvalue(m);
            let mean = (lam * t).exp() * problem.x0_coeff(m);
            mean * mean + problem.variance_at(m, t)
        });
    }
    let noise_active = t > 0.0;
    let sum = problem.tail_sum(n, noise_active.then_some(2.0 * t), if noise_active { 1.0 } else { 0.0 }, |m| {
        let lam = problem.eigenvalue(m);
        let mean = (lam * t).exp() * problem.x0_coeff(m);
        mean * mean + if noise_active { problem.variance_at(m, t) } else { 0.0 }
    })?;
    Ok(sum.sqrt())
}

/// `H_γ`-weighted variant: the weight destroys the power-law remainder, so
/// the sum runs until the analytic bound on the remainder is negligible.
fn exact_weighted<F: Fn(usize) -> f64>(problem: &SpectralSeeProblem, n: usize, term: F) -> Result<f64> {
    let q = problem.lambda_exponent;
    // weighted stationary terms decay like n^{2qγ − 2s − q}
    let decay = 2.0 * problem.s + q - 2.0 * q * problem.gamma;
    if problem.noise_scale > 0.0 && decay <= 1.0 {
        return Err(Error::invalid("weighted tail sum diverges"));
    }
    let weight = |m: usize| problem.norm_weight(m).powi(2);
    let mut sum = 0.0;
    let mut m = n + 1;
    loop {
        let end = (2 * m).max(problem.x0.len() + 1);
        sum += pairwise_sum_by(end - m, |i| weight(m + i) * term(m + i));
        m = end;
        let bound = if problem.noise_scale == 0.0 {
            0.0
        } else {
            // Σ_{k>=m} C k^{−decay} <= C m^{1−decay} / (decay − 1) + C m^{−decay}
            let c = problem.noise_scale.powi(2) * problem.lambda_scale.powf(2.0 * problem.gamma - 1.0) / 2.0;
            let mf = m as f64;
            c * (mf.powf(1.0 - decay) / (decay - 1.0) + mf.powf(-decay))
        };
        if bound <= 1e-14 * sum || m > MAX_DIRECT_MODES {
            if bound > 1e-14 * sum {
                return Err(Error::Truncation {
                    max_terms: MAX_DIRECT_MODES,
                    last_term: bound,
                    partial_sum: sum,
                });
            }
            return Ok(sum.sqrt());
        }
    }
}

/// `‖(X_t − X^N_t) − (X_s − X^N_s)‖_{L²(P; H)}` for the linear equation
/// (`γ = 0`), `s < t`.
fn exact_linear_increment_error(problem: &SpectralSeeProblem, n: usize, s: f64, t: f64) -> Result<f64> {
    let dt = t - s;
    let (tau, mult) = if problem.noise_scale == 0.0 {
        (None, 0.0)
    } else if s > 0.0 {
        (Some(s.min(dt)), 2.0)
    } else {
        (Some(dt), 1.0)
    };
    let sum = problem.tail_sum(n, tau, mult, |m| {
        let lam = problem.eigenvalue(m);
        let x0 = problem.x0_coeff(m);
        let dmean = ((lam * t).exp() - (lam * s).exp()) * x0;
        let b = problem.noise_coeff(m);
        // Var(X_t − X_s) = v(t) − v(s) + 2 v(s)(1 − e^{λ(t−s)})
        let vs = problem.variance_at(m, s);
        let growth = b * b * (2.0 * lam * s).exp() * -(2.0 * lam * dt).exp_m1() / (2.0 * lam.abs());
        dmean * dmean + growth + 2.0 * vs * -(lam * dt).exp_m1()
    })?;
    Ok(sum.sqrt())
}

/// Exact `C^δ([0,T]; L²)` norm (`δ > 0`) or `sup_t L²` norm (`δ = 0`) of
/// the linear Galerkin error over the points of `theta`.
pub fn exact_linear_error_norm(problem: &SpectralSeeProblem, n: usize, theta: &Partition, delta: f64) -> Result<f64> {
    exact_linear_band_error_norm(problem, n, None, theta, delta)
}

/// As [`exact_linear_error_norm`], but for `X^{N_ref} − X^N` (modes
/// `N+1..=N_ref`) when `n_ref` is given: the quantity a Monte Carlo run with
/// an `N_ref`-mode reference actually measures.
pub fn exact_linear_band_error_norm(
    problem: &SpectralSeeProblem,
    n: usize,
    n_ref: Option<usize>,
    theta: &Partition,
    delta: f64,
) -> Result<f64> {
    problem.require_linear("the exact error norm")?;
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta must lie in [0, 1], got {delta}")));
    }
    if let Some(r) = n_ref {
        if r < n {
            return Err(Error::invalid(format!("N_ref = {r} must be >= N = {n}")));
        }
    }
    // tail(N) over modes > N, minus the same tail beyond N_ref
    let band = |tail: &dyn Fn(usize) -> Result<f64>| -> Result<f64> {
        let upper = tail(n)?;
        match n_ref {
            None => Ok(upper),
            Some(r) => {
                let beyond = tail(r)?;
                Ok((upper * upper - beyond * beyond).max(0.0).sqrt())
            }
        }
    };
    let pts = theta.points();
    let mut sup = 0.0f64;
    for &t in pts {
        sup = sup.max(band(&|m| exact_linear_second_moment_error(problem, m, t))?);
    }
    if delta == 0.0 {
        return Ok(sup);
    }
    if problem.gamma != 0.0 {
        return Err(Error::Unsupported("exact increment norms require gamma = 0".into()));
    }
    let mut semi = 0.0f64;
    for (i, &s) in pts.iter().enumerate() {
        for &t in &pts[i + 1..] {
            semi = semi.max(band(&|m| exact_linear_increment_error(problem, m, s, t))? / (t - s).powf(delta));
        }
    }
    Ok(sup + semi)
}

fn check_modes(n_modes: usize) -> Result<()> {
    if n_modes == 0 {
        return Err(Error::invalid("need at least one mode"));
    }
    Ok(())
}

/// Exact-in-law sample of the first `n_modes` coefficients of the linear
/// solution on `theta`. Mode `n` draws its noise from `stream.derive("mode", n)`,
/// so solutions with different mode counts are coupled by truncation.
pub fn simulate_linear_exact(
    problem: &SpectralSeeProblem,
    n_modes: usize,
    theta: &Partition,
    stream: &RngStream,
) -> Result<SampledPath> {
    problem.require_linear("exact linear simulation")?;
    check_modes(n_modes)?;
    let pts = theta.points();
    let mut values = vec![0.0; pts.len() * n_modes];
    for n in 1..=n_modes {
        let lam = problem.eigenvalue(n);
        let b = problem.noise_coeff(n);
        let mut normals = stream.derive("mode", n as u64).normals();
        let mut x = problem.x0_coeff(n);
        values[n - 1] = x;
        for k in 1..pts.len() {
            let h = pts[k] - pts[k - 1];
            let decay = (lam * h).exp();
            let sd = b * (-(2.0 * lam * h).exp_m1() / (2.0 * lam.abs())).sqrt();
            x = decay * x + sd * normals.next_normal();
            values[k * n_modes + n - 1] = x;
        }
    }
    SampledPath::new(theta.clone(), values, n_modes)
}

/// Exponential Euler for the projected semilinear equation:
/// `X_{k+1,n} = e^{λ_n h} X_{k,n} + λ_n^{−1}(e^{λ_n h} − 1) F(X_k)_n + b_n σ_n(h) ξ_{k,n}`
/// with `σ_n(h)² = (1 − e^{2λ_n h})/(2|λ_n|)`, the exact variance of the
/// stochastic convolution over one step. With `F = 0` it reproduces
/// [`simulate_linear_exact`] bit for bit.
pub fn simulate_semilinear(
    problem: &SpectralSeeProblem,
    n_modes: usize,
    theta: &Partition,
    stream: &RngStream,
) -> Result<SampledPath> {
    check_modes(n_modes)?;
    let pts = theta.points();
    let lam: Vec<f64> = (1..=n_modes).map(|n| problem.eigenvalue(n)).collect();
    let b: Vec<f64> = (1..=n_modes).map(|n| problem.noise_coeff(n)).collect();
    let mut normals: Vec<_> = (1..=n_modes)
        .map(|n| stream.derive("mode", n as u64).normals())
        .collect();
    let linear = problem.is_linear();
    let mut x: Vec<f64> = (1..=n_modes).map(|n| problem.x0_coeff(n)).collect();
    let mut values = Vec::with_capacity(pts.len() * n_modes);
    values.extend_from_slice(&x);
    let mut forcing = vec![0.0; n_modes];
    for k in 1..pts.len() {
        let h = pts[k] - pts[k - 1];
        if !linear {
            for (i, f) in forcing.iter_mut().enumerate() {
                *f = problem.nonlinear_term(i + 1, x[i]);
            }
        }
        for i in 0..n_modes {
            let decay = (lam[i] * h).exp();
            let sd = b[i] * (-(2.0 * lam[i] * h).exp_m1() / (2.0 * lam[i].abs())).sqrt();
            let drift = if linear {
                decay * x[i]
            } else {
                decay * x[i] + (lam[i] * h).exp_m1() / lam[i] * forcing[i]
            };
            x[i] = drift + sd * normals[i].next_normal();
        }
        values.extend_from_slice(&x);
    }
    SampledPath::new(theta.clone(), values, n_modes)
}

/// Simulates `n_modes` coefficients, exactly for linear problems.
pub fn simulate(problem: &SpectralSeeProblem, n_modes: usize, theta: &Partition, stream: &RngStream) -> Result<SampledPath> {
    if problem.is_linear() {
        simulate_linear_exact(problem, n_modes, theta, stream)
    } else {
        simulate_semilinear(problem, n_modes, theta, stream)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinConfig {
    pub ns: Vec<usize>,
    pub n_ref: usize,
    pub p: f64,
    /// Hölder exponent in time; `0` measures `sup_t ‖·‖_{L^p}`.
    pub delta: f64,
    pub samples: usize,
    pub time_steps: usize,
    pub seed: u64,
}

impl Default for GalerkinConfig {
    fn default() -> Self {
        Self {
            ns: vec![4, 8, 16, 32],
            n_ref: 256,
            p: 2.0,
            delta: 0.0,
            samples: 4000,
            time_steps: 1024,
            seed: 0,
        }
    }
}

impl GalerkinConfig {
    fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.contains(&0) {
            return Err(Error::invalid("Ns must be a nonempty list of positive integers"));
        }
        if self.ns.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("Ns must be nondecreasing"));
        }
        let n_max = *self.ns.last().unwrap();
        if self.n_ref < 4 * n_max {
            return Err(Error::invalid(format!("N_ref must be >= 4 max(Ns) = {}", 4 * n_max)));
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::invalid("p must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::invalid("delta must lie in [0, 1)"));
        }
        if self.samples < 2 || self.time_steps == 0 {
            return Err(Error::invalid("need samples >= 2 and time_steps >= 1"));
        }
        Ok(())
    }
}

/// One line of `galerkin_rate.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalerkinRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub delta: f64,
    pub error: f64,
    pub stderr: f64,
    /// Exact error of the `N_ref`-mode reference minus the `N`-mode solution
    /// (linear problems at `p = 2` only).
    pub exact_error: Option<f64>,
}

/// Error paths `X^{N_ref} − X^N` (the modes `N+1..=N_ref`, `H_γ`-weighted)
/// for every `N`, from one `N_ref`-mode simulation. `F` is diagonal, so the
/// `N`-mode solution is the truncation of the `N_ref`-mode one.
fn galerkin_error_paths(
    problem: &SpectralSeeProblem,
    cfg: &GalerkinConfig,
    theta: &Partition,
    stream: &RngStream,
) -> Result<Vec<SampledPath>> {
    let full = simulate(problem, cfg.n_ref, theta, stream)?;
    let weights: Vec<f64> = (1..=cfg.n_ref).map(|n| problem.norm_weight(n)).collect();
    cfg.ns
        .iter()
        .map(|&n| {
            let dim = cfg.n_ref - n;
            let mut values = Vec::with_capacity(theta.len() * dim);
            for k in 0..theta.len() {
                let row = full.value(k);
                values.extend(row[n..].iter().zip(&weights[n..]).map(|(x, w)| x * w));
            }
            SampledPath::new(theta.clone(), values, dim)
        })
        .collect()
}

/// Monte Carlo Galerkin error (against the `N_ref`-mode solution) for each
/// `N`, with the exact column for linear problems at `p = 2`.
pub fn galerkin_rate_experiment(problem: &SpectralSeeProblem, cfg: &GalerkinConfig) -> Result<(Vec<GalerkinRow>, RateFit)> {
    problem.validate()?;
    cfg.validate()?;
    let theta = Partition::uniform(cfg.time_steps, problem.horizon)?;
    let root = RngStream::new(cfg.seed).derive("galerkin", 0);
    let sampler = |s: &RngStream| galerkin_error_paths(problem, cfg, &theta, s);
    let with_pairs = cfg.delta > 0.0;
    let moments = PairMoments::accumulate_many(&sampler, cfg.p, cfg.samples, 1, &root, with_pairs)?;
    let exact_available = problem.is_linear() && cfg.p == 2.0 && (cfg.delta == 0.0 || problem.gamma == 0.0);
    let mut rows = Vec::with_capacity(cfg.ns.len());
    for (&n, m) in cfg.ns.iter().zip(&moments) {
        let est = if with_pairs {
            m.estimate(EstimateKind::HolderOfLp, cfg.delta, NormKind::Full)?
        } else {
            m.estimate(EstimateKind::SupOfLp, 0.0, NormKind::Full)?
        };
        let exact_error = if exact_available {
            Some(exact_linear_band_error_norm(problem, n, Some(cfg.n_ref), &theta, cfg.delta)?)
        } else {
            None
        };
        rows.push(GalerkinRow {
            n,
            p: cfg.p,
            delta: cfg.delta,
            error: est.value,
            stderr: est.std_error,
            exact_error,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok((rows, fit_rate(&xs, &ys)?))
}

/// Per-path convergence: for each sample the pathwise errors
/// `sup_{t∈θ} ‖X^{N_ref}_t − X^N_t‖_{H_γ}` are fit against `N` separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwiseSlopes {
    pub slopes: Vec<f64>,
    pub median: f64,
}

pub fn galerkin_pathwise_slopes(problem: &SpectralSeeProblem, cfg: &GalerkinConfig) -> Result<PathwiseSlopes> {
    use rayon::prelude::*;
    problem.validate()?;
    cfg.validate()?;
    if cfg.ns.windows(2).any(|w| w[1] == w[0]) {
        return Err(Error::invalid("pathwise fits need strictly increasing Ns"));
    }
    let theta = Partition::uniform(cfg.time_steps, problem.horizon)?;
    let root = RngStream::new(cfg.seed).derive("galerkin_pathwise", 0);
    let xs: Vec<f64> = cfg.ns.iter().map(|&n| n as f64).collect();
    let slopes: Vec<f64> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let paths = galerkin_error_paths(problem, cfg, &theta, &root.derive("sample", i as u64))?;
            let errs: Vec<f64> = paths.iter().map(|p| p.sup_norm()).collect();
            Ok(fit_rate(&xs, &errs)?.slope)
        })
        .collect::<Result<_>>()?;
    let mut sorted = slopes.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(PathwiseSlopes { slopes, median })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn defaults_validate() {
        SpectralSeeProblem::linear_default().validate().unwrap();
        SpectralSeeProblem::semilinear_default().validate().unwrap();
        let bad = SpectralSeeProblem {
            theta_target: 0.6,
            ..SpectralSeeProblem::default()
        };
        assert!(bad.validate().is_err());
        let slow_noise = SpectralSeeProblem {
            chi: 0.1,
            ..SpectralSeeProblem::default()
        };
        assert!(slow_noise.validate().is_err());
        let big_iota = SpectralSeeProblem {
            iota: 2.5,
            ..SpectralSeeProblem::default()
        };
        assert!(big_iota.validate().is_err());
    }

    #[test]
    fn iota_witness_is_bounded() {
        let p = SpectralSeeProblem::default();
        let pi2 = std::f64::consts::PI.powi(2);
        for n in 1..2000 {
            let w = p.iota_witness(n);
            let nf = n as f64;
            assert!(rel(w, nf * nf / (pi2 * (nf + 1.0).powi(2))) < 1e-14);
            assert!(w <= 1.0 / pi2);
        }
    }

    #[test]
    fn exact_error_trivial_cases() {
        let p = SpectralSeeProblem::default();
        assert_eq!(exact_linear_second_moment_error(&p, 4, 0.0).unwrap(), 0.0);
        let q = SpectralSeeProblem {
            noise_scale: 0.0,
            x0: vec![1.0, 0.5, 0.25],
            ..SpectralSeeProblem::default()
        };
        assert_eq!(exact_linear_second_moment_error(&q, 3, 0.5).unwrap(), 0.0);
        assert!(exact_linear_second_moment_error(&q, 1, 0.5).unwrap() > 0.0);
        let semi = SpectralSeeProblem::semilinear_default();
        assert!(matches!(
            exact_linear_second_moment_error(&semi, 4, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn exact_error_golden_values() {
        // 40-digit evaluation of (ζ(3.2) − Σ_{n≤N} n^{−3.2} − Σ_{n>N} n^{−3.2} e^{−2π²n²}) / (2π²)
        let golden = [
            (4, 0.028_808_228_174_786_941),
            (8, 0.014_384_250_710_864_370),
            (16, 0.006_944_770_630_714_926_3),
            (32, 0.003_296_035_006_094_720_7),
        ];
        let p = SpectralSeeProblem::default();
        for (n, want) in golden {
            let got = exact_linear_second_moment_error(&p, n, 1.0).unwrap();
            assert!(rel(got, want) < 1e-12, "N = {n}: {got} vs {want}");
        }
    }

    #[test]
    fn exact_error_matches_brute_force_with_initial_value() {
        let p = SpectralSeeProblem {
            x0: (1..=40).map(|n| 1.0 / n as f64).collect(),
            ..SpectralSeeProblem::default()
        };
        for (n, t) in [(2, 0.001), (5, 0.01), (10, 0.3)] {
            let brute: f64 = (n + 1..=2_000_000)
                .rev()
                .map(|m| {
                    let lam = p.eigenvalue(m);
                    let mean = (lam * t).exp() * p.x0_coeff(m);
                    mean * mean + p.variance_at(m, t)
                })
                .sum();
            let got = exact_linear_second_moment_error(&p, n, t).unwrap();
            assert!(rel(got, brute.sqrt()) < 1e-9, "N = {n}, t = {t}");
        }
    }

    #[test]
    fn exact_error_is_monotone_in_n() {
        let p = SpectralSeeProblem::default();
        let mut prev = f64::INFINITY;
        for n in 1..64 {
            let e = exact_linear_second_moment_error(&p, n, 1.0).unwrap();
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn increment_error_matches_brute_force() {
        let p = SpectralSeeProblem {
            x0: vec![0.3, -0.2, 0.1],
            ..SpectralSeeProblem::default()
        };
        for (n, s, t) in [(1, 0.0, 0.25), (2, 0.25, 0.5), (4, 0.5, 1.0)] {
            let brute: f64 = (n + 1..=1_000_000)
                .rev()
                .map(|m| {
                    let lam = p.eigenvalue(m);
                    let dmean = ((lam * t).exp() - (lam * s).exp()) * p.x0_coeff(m);
                    // Var X_t + Var X_s − 2 Cov(X_s, X_t), Cov = e^{λ(t−s)} Var X_s
                    let var = p.variance_at(m, t) + p.variance_at(m, s)
                        - 2.0 * (lam * (t - s)).exp() * p.variance_at(m, s);
                    dmean * dmean + var
                })
                .sum();
            let got = exact_linear_increment_error(&p, n, s, t).unwrap();
            assert!(rel(got, brute.sqrt()) < 1e-8, "N = {n}, s = {s}, t = {t}");
        }
    }

    #[test]
    fn deterministic_heat_decay() {
        let p = SpectralSeeProblem {
            noise_scale: 0.0,
            x0: vec![1.0],
            ..SpectralSeeProblem::default()
        };
        let theta = Partition::uniform(8, 1.0).unwrap();
        let path = simulate_linear_exact(&p, 3, &theta, &RngStream::new(1)).unwrap();
        for (k, &t) in theta.points().iter().enumerate() {
            assert!(rel(path.value(k)[0], (p.eigenvalue(1) * t).exp()) < 1e-12);
            assert_eq!(path.value(k)[1], 0.0);
        }
    }

    #[test]
    fn truncation_coupling_is_bit_exact() {
        let theta = Partition::uniform(16, 1.0).unwrap();
        let s = RngStream::new(9).derive("x", 1);
        for problem in [SpectralSeeProblem::linear_default(), SpectralSeeProblem::semilinear_default()] {
            let small = simulate(&problem, 8, &theta, &s).unwrap();
            let large = simulate(&problem, 16, &theta, &s).unwrap();
            for k in 0..theta.len() {
                assert_eq!(small.value(k), &large.value(k)[..8]);
            }
        }
    }

    #[test]
    fn semilinear_reduces_to_linear_exactly() {
        let p = SpectralSeeProblem {
            x0: vec![0.5, -1.0],
            ..SpectralSeeProblem::default()
        };
        let theta = Partition::new(vec![0.0, 0.1, 0.15, 0.6, 1.0]).unwrap();
        let s = RngStream::new(3);
        let a = simulate_linear_exact(&p, 12, &theta, &s).unwrap();
        let b = simulate_semilinear(&p, 12, &theta, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn damping_converges_at_first_order() {
        let p = SpectralSeeProblem {
            noise_scale: 0.0,
            nonlinearity: Nonlinearity::Damping { rate: 1.0 },
            x0: vec![1.0],
            ..SpectralSeeProblem::default()
        };
        let exact = ((p.eigenvalue(1) - 1.0) * p.horizon).exp();
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for steps in [64, 128, 256, 512, 1024] {
            let theta = Partition::uniform(steps, p.horizon).unwrap();
            let path = simulate_semilinear(&p, 1, &theta, &RngStream::new(0)).unwrap();
            hs.push(p.horizon / steps as f64);
            errs.push((path.value(steps)[0] - exact).abs());
        }
        let fit = fit_rate(&hs, &errs).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05, "slope {}", fit.slope);
    }

    #[test]
    fn config_validation() {
        let p = SpectralSeeProblem::default();
        let cfg = GalerkinConfig {
            ns: vec![4, 8],
            n_ref: 16,
            ..GalerkinConfig::default()
        };
        assert!(galerkin_rate_experiment(&p, &cfg).is_err());
        let cfg = GalerkinConfig {
            ns: vec![8, 4],
            ..GalerkinConfig::default()
        };
        assert!(galerkin_rate_experiment(&p, &cfg).is_err());
    }

    #[test]
    fn small_linear_experiment_tracks_exact_column() {
        let p = SpectralSeeProblem::default();
        let cfg = GalerkinConfig {
            ns: vec![2, 4],
            n_ref: 64,
            samples: 2000,
            time_steps: 8,
            seed: 4,
            ..GalerkinConfig::default()
        };
        let (rows, _) = galerkin_rate_experiment(&p, &cfg).unwrap();
        for r in rows {
            let exact = r.exact_error.unwrap();
            assert!((r.error - exact).abs() < 4.0 * r.stderr, "{r:?}");
        }
    }

    #[test]
    fn band_error_matches_direct_finite_sum() {
        let p = SpectralSeeProblem {
            x0: vec![0.3, -0.2, 0.1],
            ..SpectralSeeProblem::default()
        };
        let theta = Partition::new(vec![0.0, 0.01, 0.3, 1.0]).unwrap();
        for (n, n_ref) in [(2, 8), (4, 64), (16, 256)] {
            let band = exact_linear_band_error_norm(&p, n, Some(n_ref), &theta, 0.0).unwrap();
            let direct = theta
                .points()
                .iter()
                .map(|&t| {
                    (n + 1..=n_ref)
                        .map(|m| {
                            let mean = (p.eigenvalue(m) * t).exp() * p.x0_coeff(m);
                            mean * mean + p.variance_at(m, t)
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max);
            assert!((band - direct).abs() <= 1e-12 * direct, "N {n}: {band} vs {direct}");
            let infinite = exact_linear_error_norm(&p, n, &theta, 0.0).unwrap();
            assert!(band <= infinite);
        }
        assert_eq!(
            exact_linear_band_error_norm(&p, 8, Some(8), &theta, 0.0).unwrap(),
            0.0
        );
        assert!(exact_linear_band_error_norm(&p, 8, Some(4), &theta, 0.0).is_err());
    }
}
