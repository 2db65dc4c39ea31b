use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares fit of `log(error) = intercept + slope * log(abscissa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub abscissae: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_rate(abscissae: &[f64], errors: &[f64]) -> Result<RateFit> {
    if abscissae.len() != errors.len() {
        return Err(Error::invalid("abscissae and errors differ in length"));
    }
    if abscissae.len() < 2 {
        return Err(Error::invalid("a rate fit needs at least two points"));
    }
    if abscissae.iter().chain(errors).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("rate fit requires positive finite data"));
    }
    let xs: Vec<f64> = abscissae.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs at least two distinct abscissae"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        abscissae: abscissae.to_vec(),
        errors: errors.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic_schemes::RngStream;

    #[test]
    fn exact_power_law() {
        let ns = [2.0, 4.0, 8.0, 16.0];
        let errs: Vec<f64> = ns.iter().map(|n: &f64| 3.0 * n.powf(-0.5)).collect();
        let fit = fit_rate(&ns, &errs).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(fit_rate(&[4.0], &[1.0]).is_err());
        assert!(fit_rate(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(fit_rate(&[1.0, -2.0], &[1.0, 1.0]).is_err());
        assert!(fit_rate(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn noisy_inverse_law_stays_in_band() {
        let ns: Vec<f64> = (1..=6).map(|k| 2f64.powi(k)).collect();
        for trial in 0..100 {
            let mut u = RngStream::new(77).derive("trial", trial).uniforms();
            let errs: Vec<f64> = ns.iter().map(|n| (1.0 + 0.05 * u.next_symmetric()) / n).collect();
            let fit = fit_rate(&ns, &errs).unwrap();
            assert!((-1.15..=-0.85).contains(&fit.slope), "slope {}", fit.slope);
        }
    }
}
