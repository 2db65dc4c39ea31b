//! Scalar special functions: Γ, the `ℰ_r` series, Gaussian absolute
//! moments and the Brownian interpolation ratio `f(α)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument (original minus one)
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    acc
}

/// Γ(x) for x > 0.
pub fn gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("gamma", format!("argument must be positive, got {x}")));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection keeps the small-argument branch accurate
        return PI / ((PI * x).sin() * gamma_unchecked(1.0 - x));
    }
    if x == x.floor() && x <= 23.0 {
        return factorial(x as u32 - 1);
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    // split the power so t^{z+1/2} cannot overflow before e^{-t} is applied
    let half = t.powf(0.5 * (z + 0.5));
    (2.0 * PI).sqrt() * half * (half * (-t).exp()) * lanczos_sum(z)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("ln_gamma", format!("argument must be positive, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    if x < 100.0 {
        return gamma_unchecked(x).ln();
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + lanczos_sum(z).ln()
}

/// Truncation policy for the `ℰ_r` series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesConfig {
    pub rel_tol: f64,
    pub max_terms: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-14,
            max_terms: 10_000,
        }
    }
}

/// `ℰ_r(x) = sqrt(Σ_n x^{2n} Γ(r)^n / Γ(nr + 1))`.
///
/// Summation stops at the first term that is both smaller than the previous
/// one and below `rel_tol` times the partial sum.
pub fn script_e(r: f64, x: f64, cfg: &SeriesConfig) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain("script_e", format!("r must be positive, got {r}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain("script_e", format!("x must be nonnegative, got {x}")));
    }
    if !(cfg.rel_tol > 0.0) || cfg.max_terms == 0 {
        return Err(Error::invalid("series config needs rel_tol > 0 and max_terms >= 1"));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let ln_gamma_r = ln_gamma_unchecked(r);
    let base = x * x * gamma_unchecked(r);
    let ln_base = 2.0 * x.ln() + ln_gamma_r;
    let mut sum = 1.0;
    let mut prev = 1.0;
    for n in 1..cfg.max_terms {
        let arg = n as f64 * r + 1.0;
        let direct = if arg <= 170.0 {
            base.powi(n as i32) / gamma_unchecked(arg)
        } else {
            f64::NAN
        };
        let term = if direct.is_finite() && direct > 0.0 {
            direct
        } else {
            (n as f64 * ln_base - ln_gamma_unchecked(arg)).exp()
        };
        sum += term;
        if !sum.is_finite() {
            return Err(Error::Truncation {
                max_terms: cfg.max_terms,
                last_term: term,
                partial_sum: sum,
            });
        }
        if term < prev && term < cfg.rel_tol * sum {
            return Ok(sum.sqrt());
        }
        prev = term;
    }
    Err(Error::Truncation {
        max_terms: cfg.max_terms,
        last_term: prev,
        partial_sum: sum,
    })
}

/// `ln ℰ_r(x)`, summed in log space so it stays finite where `ℰ_r(x)`
/// itself exceeds the double-precision range (e.g. `ℰ_{1/4}(2) ≈ e^{22102}`).
/// Uses the same stopping rule as [`script_e`]; large arguments need a
/// correspondingly large `max_terms`.
pub fn ln_script_e(r: f64, x: f64, cfg: &SeriesConfig) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain("ln_script_e", format!("r must be positive, got {r}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain("ln_script_e", format!("x must be nonnegative, got {x}")));
    }
    if !(cfg.rel_tol > 0.0) || cfg.max_terms == 0 {
        return Err(Error::invalid("series config needs rel_tol > 0 and max_terms >= 1"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let ln_base = 2.0 * x.ln() + ln_gamma_unchecked(r);
    let ln_tol = cfg.rel_tol.ln();
    // running sum = e^{shift} · scaled, started with the n = 0 term
    let mut shift = 0.0;
    let mut scaled = 1.0;
    let mut prev = 0.0;
    for n in 1..cfg.max_terms {
        let ln_term = n as f64 * ln_base - ln_gamma_unchecked(n as f64 * r + 1.0);
        if ln_term > shift {
            scaled = scaled * (shift - ln_term).exp() + 1.0;
            shift = ln_term;
        } else {
            scaled += (ln_term - shift).exp();
        }
        if ln_term < prev && ln_term < shift + scaled.ln() + ln_tol {
            return Ok(0.5 * (shift + scaled.ln()));
        }
        prev = ln_term;
    }
    Err(Error::Truncation {
        max_terms: cfg.max_terms,
        last_term: prev.exp(),
        partial_sum: (shift + scaled.ln()).exp(),
    })
}

/// `(E|Z|^p)^{1/p}` for a standard normal `Z`.
pub fn gaussian_abs_moment(p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::domain("gaussian_abs_moment", format!("p must be >= 1, got {p}")));
    }
    let ln_moment = 0.5 * p * 2f64.ln() + ln_gamma_unchecked(0.5 * (p + 1.0)) - 0.5 * PI.ln();
    Ok((ln_moment / p).exp())
}

/// `f(α) = (1/2 − α)^{1/2 − α} / (2^α (1 − α)^{1 − α})` on `[0, 1/2]`,
/// with `0^0 = 1` at the right endpoint.
pub fn brownian_ratio_f(alpha: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::domain(
            "brownian_ratio_f",
            format!("alpha must lie in [0, 1/2], got {alpha}"),
        ));
    }
    let a = 0.5 - alpha;
    if a == 0.0 {
        return Ok(1.0);
    }
    let num = a.powf(a);
    let b = 1.0 - alpha;
    Ok(num / (2f64.powf(alpha) * b.powf(b)))
}
