use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid_paths::{Partition, SampledPath};

type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type ExactSolution = Arc<dyn Fn(&[f64], f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// `dX = μ(X) dt + σ(X) dW` on `[0, T]` with `X_0 = x0`.
///
/// `diffusion` writes a `d x m` matrix in row-major order. The optional
/// exact solution maps `(x0, t, W_t)` to `X_t`.
#[derive(Clone)]
pub struct SdeProblem {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// Declared global Lipschitz constants of (μ, σ).
    pub lipschitz: (f64, f64),
    drift: VectorField,
    diffusion: VectorField,
    exact: Option<ExactSolution>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("has_exact_solution", &self.exact.is_some())
            .finish()
    }
}

impl SdeProblem {
    pub fn new<D, S>(
        name: impl Into<String>,
        x0: Vec<f64>,
        m: usize,
        horizon: f64,
        lipschitz: (f64, f64),
        drift: D,
        diffusion: S,
    ) -> Result<Self>
    where
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if x0.is_empty() || m == 0 {
            return Err(Error::invalid("SDE needs d >= 1 and m >= 1"));
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            name: name.into(),
            d: x0.len(),
            m,
            x0,
            horizon,
            lipschitz,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            exact: None,
        })
    }

    pub fn with_exact_solution<F>(mut self, exact: F) -> Self
    where
        F: Fn(&[f64], f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.exact = Some(Arc::new(exact));
        self
    }

    /// `X = x0 + W` in one dimension.
    pub fn brownian_motion(x0: f64, horizon: f64) -> Result<Self> {
        Ok(Self::new(
            "brownian",
            vec![x0],
            1,
            horizon,
            (0.0, 0.0),
            |_, out| out[0] = 0.0,
            |_, out| out[0] = 1.0,
        )?
        .with_exact_solution(|x0, _, w| vec![x0[0] + w[0]]))
    }

    /// Geometric Brownian motion `dX = a X dt + b X dW`.
    pub fn geometric_brownian_motion(a: f64, b: f64, x0: f64, horizon: f64) -> Result<Self> {
        Ok(Self::new(
            "gbm",
            vec![x0],
            1,
            horizon,
            (a.abs(), b.abs()),
            move |x, out| out[0] = a * x[0],
            move |x, out| out[0] = b * x[0],
        )?
        .with_exact_solution(move |x0, t, w| {
            vec![x0[0] * ((a - 0.5 * b * b) * t + b * w[0]).exp()]
        }))
    }

    /// Deterministic `x' = a x` (σ = 0).
    pub fn linear_ode(a: f64, x0: f64, horizon: f64) -> Result<Self> {
        Ok(Self::new(
            "ode",
            vec![x0],
            1,
            horizon,
            (a.abs(), 0.0),
            move |x, out| out[0] = a * x[0],
            |_, out| out[0] = 0.0,
        )?
        .with_exact_solution(move |x0, t, _| vec![x0[0] * (a * t).exp()]))
    }

    /// Drops the closed-form solution so experiments fall back to a fine
    /// Euler reference.
    pub fn without_exact_solution(mut self) -> Self {
        self.exact = None;
        self
    }

    pub fn has_exact_solution(&self) -> bool {
        self.exact.is_some()
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    /// Exact solution along a Brownian path, on the path's grid.
    pub fn exact_path(&self, w: &SampledPath) -> Result<Option<SampledPath>> {
        let Some(exact) = &self.exact else {
            return Ok(None);
        };
        let mut values = Vec::with_capacity(w.len() * self.d);
        for (i, &t) in w.grid().points().iter().enumerate() {
            values.extend(exact(&self.x0, t, w.value(i)));
        }
        SampledPath::new(w.grid().clone(), values, self.d).map(Some)
    }
}

/// Euler–Maruyama on the uniform `n`-step grid, extended to every point of
/// `w.grid()`: on `[t_k, t_{k+1}]` the drift is scaled by elapsed time and
/// the noise by the fraction of the full increment.
pub fn euler_maruyama(problem: &SdeProblem, n: usize, w: &SampledPath) -> Result<SampledPath> {
    if w.dim() != problem.m {
        return Err(Error::invalid(format!(
            "Brownian path has dimension {}, problem expects {}",
            w.dim(),
            problem.m
        )));
    }
    if w.grid().horizon() != problem.horizon {
        return Err(Error::invalid("Brownian path horizon differs from the problem horizon"));
    }
    let coarse = Partition::uniform(n, problem.horizon)?;
    let idx = coarse.embedding_in(w.grid())?;
    let (d, m) = (problem.d, problem.m);
    let h = problem.horizon / n as f64;
    let fine = w.grid().points();

    let mut values = vec![0.0; w.len() * d];
    values[..d].copy_from_slice(&problem.x0);
    let mut y = problem.x0.clone();
    let mut mu = vec![0.0; d];
    let mut sigma = vec![0.0; d * m];
    let mut noise = vec![0.0; d];
    for k in 0..n {
        let (a, b) = (idx[k], idx[k + 1]);
        problem.drift(&y, &mut mu);
        problem.diffusion(&y, &mut sigma);
        let (wa, wb) = (w.value(a), w.value(b));
        for r in 0..d {
            noise[r] = (0..m).map(|c| sigma[r * m + c] * (wb[c] - wa[c])).sum();
        }
        let (ta, tb) = (fine[a], fine[b]);
        for i in a + 1..=b {
            let s = if i == b { 1.0 } else { (fine[i] - ta) / (tb - ta) };
            let out = &mut values[i * d..(i + 1) * d];
            for r in 0..d {
                out[r] = y[r] + s * h * mu[r] + s * noise[r];
            }
        }
        y.copy_from_slice(&values[b * d..(b + 1) * d]);
    }
    SampledPath::new(w.grid().clone(), values, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic_schemes::{sample_brownian, RngStream};

    #[test]
    fn deterministic_recursion() {
        let p = SdeProblem::linear_ode(1.0, 1.0, 1.0).unwrap();
        let w = SampledPath::zeros(Partition::uniform(2, 1.0).unwrap(), 1);
        let y = euler_maruyama(&p, 2, &w).unwrap();
        assert_eq!(y.values(), &[1.0, 1.5, 2.25]);
    }

    #[test]
    fn pure_noise_reproduces_brownian_interpolant() {
        let p = SdeProblem::brownian_motion(0.0, 1.0).unwrap();
        let fine = Partition::uniform(64, 1.0).unwrap();
        let w = sample_brownian(&fine, 1, &RngStream::new(11)).unwrap();
        let y = euler_maruyama(&p, 8, &w).unwrap();
        let interp = w.interpolant_on(&Partition::uniform(8, 1.0).unwrap()).unwrap();
        for (a, b) in y.values().iter().zip(interp.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_values_follow_classical_euler() {
        let p = SdeProblem::geometric_brownian_motion(0.5, 0.2, 1.0, 1.0).unwrap();
        let fine = Partition::uniform(32, 1.0).unwrap();
        let w = sample_brownian(&fine, 1, &RngStream::new(2)).unwrap();
        let y = euler_maruyama(&p, 4, &w).unwrap();
        let mut x = 1.0;
        for k in 0..4 {
            let dw = w.value(8 * (k + 1))[0] - w.value(8 * k)[0];
            x = x + 0.25 * 0.5 * x + 0.2 * x * dw;
            assert!((y.value(8 * (k + 1))[0] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_nested_grid() {
        let p = SdeProblem::brownian_motion(0.0, 1.0).unwrap();
        let w = SampledPath::zeros(Partition::uniform(10, 1.0).unwrap(), 1);
        assert!(euler_maruyama(&p, 4, &w).is_err());
    }
}
