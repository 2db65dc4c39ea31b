//! Monte Carlo estimators of `L^p(P; C^α)` and `C^α([0,T]; L^p)` norms.
//!
//! Sample `i` is always drawn from `stream.derive("sample", i)`, and every
//! reduction runs over sample index in a fixed tree, so estimates do not
//! depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_paths::{DistanceBand, HolderEvaluator, Partition, SampledPath};
use crate::stochastic_schemes::rng::RngStream;
use crate::summation::{mean_and_variance, pairwise_sum_vectors};

/// Which pathwise quantity is measured: the Hölder seminorm alone or the
/// full norm `sup + seminorm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Seminorm,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    /// `(E ‖X‖_{C^α}^p)^{1/p}`
    LpOfHolder,
    /// Hölder norm in time of `t ↦ ‖X_t‖_{L^p}`
    HolderOfLp,
    /// `sup_t ‖X_t‖_{L^p}`
    SupOfLp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpHolderEstimate {
    pub p: f64,
    pub alpha: f64,
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub refinement: usize,
    pub kind: EstimateKind,
    pub norm: NormKind,
}

const CHUNK: usize = 256;
const GROUP: usize = 8;

fn check_common(p: f64, alpha: f64, samples: usize, oversample: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {samples}")));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid(format!("p must be >= 1, got {p}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if oversample == 0 {
        return Err(Error::invalid("oversample must be >= 1"));
    }
    Ok(())
}

#[inline]
fn pow_p(a: f64, p: f64) -> f64 {
    if p == 2.0 {
        a * a
    } else if p == 1.0 {
        a
    } else {
        a.powf(p)
    }
}

/// `(mean)^{1/p}` and its delta-method standard error from the sum and sum
/// of squares of `n` observations of `|Y|^p`.
fn root_of_mean(sum: f64, sumsq: f64, n: usize, p: f64) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if mean <= 0.0 {
        return (0.0, 0.0);
    }
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let value = mean.powf(1.0 / p);
    let se = value / (p * mean) * (var / nf).sqrt();
    (value, se)
}

fn draw<S>(sampler: &S, stream: &RngStream, i: usize, oversample: usize) -> Result<SampledPath>
where
    S: Fn(&RngStream) -> Result<SampledPath>,
{
    sampler(&stream.derive("sample", i as u64))?.refine(oversample)
}

/// `(E ‖X‖^p)^{1/p}` with the pathwise Hölder (semi)norm of each sample.
pub fn estimate_lp_of_holder<S>(
    sampler: &S,
    p: f64,
    alpha: f64,
    norm: NormKind,
    samples: usize,
    oversample: usize,
    stream: &RngStream,
) -> Result<LpHolderEstimate>
where
    S: Fn(&RngStream) -> Result<SampledPath> + Sync,
{
    check_common(p, alpha, samples, oversample)?;
    let first = draw(sampler, stream, 0, oversample)?;
    let eval = HolderEvaluator::new(first.grid(), alpha, DistanceBand::Full)?;
    let grid = first.grid().clone();
    let pathwise = |path: &SampledPath| -> Result<f64> {
        if path.grid() != &grid {
            return Err(Error::invalid("sampler returned paths on different grids"));
        }
        let semi = eval.seminorm(path.values(), path.dim());
        Ok(match norm {
            NormKind::Seminorm => semi,
            NormKind::Full => semi + path.sup_norm(),
        })
    };
    let first_norm = pathwise(&first)?;
    let rest: Vec<f64> = (1..samples)
        .into_par_iter()
        .map(|i| pathwise(&draw(sampler, stream, i, oversample)?))
        .collect::<Result<_>>()?;
    let mut norms = Vec::with_capacity(samples);
    norms.push(first_norm);
    norms.extend(rest);
    let powered: Vec<f64> = norms.iter().map(|&h| pow_p(h, p)).collect();
    let (mean, var) = mean_and_variance(&powered);
    let (value, std_error) = if mean > 0.0 {
        let value = mean.powf(1.0 / p);
        (value, value / (p * mean) * (var / samples as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(LpHolderEstimate {
        p,
        alpha,
        value,
        std_error,
        samples,
        refinement: oversample,
        kind: EstimateKind::LpOfHolder,
        norm,
    })
}

/// Per-time and per-pair empirical `p`-th moments of a family of paths
/// sharing one grid. Hölder-in-time norms of `t ↦ ‖X_t‖_{L^p}` for any
/// exponent are read off without resampling.
#[derive(Debug, Clone)]
pub struct PairMoments {
    grid: Partition,
    p: f64,
    samples: usize,
    refinement: usize,
    point_sum: Vec<f64>,
    point_sumsq: Vec<f64>,
    pair_sum: Option<Vec<f64>>,
    pair_sumsq: Option<Vec<f64>>,
}

impl PairMoments {
    /// Draws `samples` paths and accumulates moments. With `with_pairs =
    /// false` only the per-time moments are kept (enough for `SupOfLp`).
    pub fn accumulate<S>(
        sampler: &S,
        p: f64,
        samples: usize,
        oversample: usize,
        stream: &RngStream,
        with_pairs: bool,
    ) -> Result<Self>
    where
        S: Fn(&RngStream) -> Result<SampledPath> + Sync,
    {
        check_common(p, 0.0, samples, oversample)?;
        let multi = |s: &RngStream| -> Result<Vec<SampledPath>> { Ok(vec![sampler(s)?]) };
        let mut out = Self::accumulate_many(&multi, p, samples, oversample, stream, with_pairs)?;
        Ok(out.pop().expect("one output per draw"))
    }

    /// Like [`PairMoments::accumulate`] for a sampler that returns several
    /// coupled paths per draw (all on one grid); one moment table per output.
    pub fn accumulate_many<S>(
        sampler: &S,
        p: f64,
        samples: usize,
        oversample: usize,
        stream: &RngStream,
        with_pairs: bool,
    ) -> Result<Vec<Self>>
    where
        S: Fn(&RngStream) -> Result<Vec<SampledPath>> + Sync,
    {
        check_common(p, 0.0, samples, oversample)?;
        let draw_all = |i: usize| -> Result<Vec<SampledPath>> {
            sampler(&stream.derive("sample", i as u64))?
                .into_iter()
                .map(|x| x.refine(oversample))
                .collect()
        };
        let first = draw_all(0)?;
        let outputs = first.len();
        if outputs == 0 {
            return Err(Error::invalid("sampler returned no paths"));
        }
        let grid = first[0].grid().clone();
        let n = grid.len();
        let npairs = if with_pairs { n * (n - 1) / 2 } else { 0 };
        let block = 2 * n + 2 * npairs;
        let width = outputs * block;

        let chunk_sums = |c: usize| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; width];
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(samples);
            for i in lo..hi {
                let paths = if i == 0 { first.clone() } else { draw_all(i)? };
                if paths.len() != outputs {
                    return Err(Error::invalid("sampler returned a varying number of paths"));
                }
                for (o, path) in paths.iter().enumerate() {
                    if path.grid() != &grid {
                        return Err(Error::invalid("sampler returned paths on different grids"));
                    }
                    let (pt, rest) = acc[o * block..(o + 1) * block].split_at_mut(n);
                    let (ptsq, rest) = rest.split_at_mut(n);
                    let (pr, prsq) = rest.split_at_mut(npairs);
                    let dim = path.dim();
                    let v = path.values();
                    for t in 0..n {
                        let y = pow_p(crate::grid_paths::euclidean(&v[t * dim..(t + 1) * dim]), p);
                        pt[t] += y;
                        ptsq[t] += y * y;
                    }
                    if with_pairs {
                        let mut off = 0;
                        for k in 1..n {
                            for a in 0..n - k {
                                let dist = crate::grid_paths::holder_distance(v, dim, a, a + k);
                                let y = pow_p(dist, p);
                                pr[off + a] += y;
                                prsq[off + a] += y * y;
                            }
                            off += n - k;
                        }
                    }
                }
            }
            Ok(acc)
        };

        let chunks = samples.div_ceil(CHUNK);
        let mut total = vec![0.0; width];
        let mut c0 = 0;
        while c0 < chunks {
            let c1 = (c0 + GROUP).min(chunks);
            let parts: Vec<Vec<f64>> = (c0..c1)
                .into_par_iter()
                .map(chunk_sums)
                .collect::<Result<_>>()?;
            let group = pairwise_sum_vectors(&parts);
            for (t, g) in total.iter_mut().zip(&group) {
                *t += g;
            }
            c0 = c1;
        }

        Ok(total
            .chunks(block)
            .map(|b| {
                let (point_sum, rest) = b.split_at(n);
                let (point_sumsq, rest) = rest.split_at(n);
                let (pair_sum, pair_sumsq) = if with_pairs {
                    let (a, c) = rest.split_at(npairs);
                    (Some(a.to_vec()), Some(c.to_vec()))
                } else {
                    (None, None)
                };
                Self {
                    grid: grid.clone(),
                    p,
                    samples,
                    refinement: oversample,
                    point_sum: point_sum.to_vec(),
                    point_sumsq: point_sumsq.to_vec(),
                    pair_sum,
                    pair_sumsq,
                }
            })
            .collect())
    }

    pub fn grid(&self) -> &Partition {
        &self.grid
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `‖X_t‖_{L^p}` estimate at grid index `i`.
    pub fn lp_at(&self, i: usize) -> f64 {
        root_of_mean(self.point_sum[i], self.point_sumsq[i], self.samples, self.p).0
    }

    /// `(sup_t ‖X_t‖_{L^p}, std error at the maximizing time)`.
    pub fn sup_of_lp(&self) -> (f64, f64) {
        (0..self.grid.len())
            .map(|i| root_of_mean(self.point_sum[i], self.point_sumsq[i], self.samples, self.p))
            .fold((0.0, 0.0), |best, cur| if cur.0 > best.0 { cur } else { best })
    }

    /// `(|t ↦ ‖X_t‖_{L^p}|_{C^α}, std error at the maximizing pair)`, with
    /// the `L^p` norm taken of the increments `X_t - X_s`.
    pub fn seminorm_of_lp(&self, alpha: f64) -> Result<(f64, f64)> {
        let (Some(sum), Some(sumsq)) = (&self.pair_sum, &self.pair_sumsq) else {
            return Err(Error::invalid("pair moments were not accumulated"));
        };
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let pts = self.grid.points();
        let n = pts.len();
        let mut best = (0.0, 0.0);
        let mut off = 0;
        for k in 1..n {
            for a in 0..n - k {
                let (v, se) = root_of_mean(sum[off + a], sumsq[off + a], self.samples, self.p);
                if v == 0.0 {
                    continue;
                }
                let den = if alpha == 0.0 {
                    1.0
                } else {
                    (pts[a + k] - pts[a]).powf(alpha)
                };
                if v / den > best.0 {
                    best = (v / den, se / den);
                }
            }
            off += n - k;
        }
        Ok(best)
    }

    pub fn estimate(&self, kind: EstimateKind, alpha: f64, norm: NormKind) -> Result<LpHolderEstimate> {
        let (value, std_error) = match kind {
            EstimateKind::SupOfLp => self.sup_of_lp(),
            EstimateKind::HolderOfLp => {
                let semi = self.seminorm_of_lp(alpha)?;
                match norm {
                    NormKind::Seminorm => semi,
                    NormKind::Full => {
                        let sup = self.sup_of_lp();
                        (sup.0 + semi.0, sup.1.hypot(semi.1))
                    }
                }
            }
            EstimateKind::LpOfHolder => {
                return Err(Error::invalid("LpOfHolder is not a per-time moment quantity"));
            }
        };
        Ok(LpHolderEstimate {
            p: self.p,
            alpha,
            value,
            std_error,
            samples: self.samples,
            refinement: self.refinement,
            kind,
            norm,
        })
    }
}

/// Estimates `sup_t ‖X_t‖_{L^p}` (`kind = SupOfLp`) or the Hölder
/// (semi)norm in time of `t ↦ X_t ∈ L^p` (`kind = HolderOfLp`).
#[allow(clippy::too_many_arguments)]
pub fn estimate_holder_of_lp<S>(
    sampler: &S,
    p: f64,
    alpha: f64,
    kind: EstimateKind,
    norm: NormKind,
    samples: usize,
    oversample: usize,
    stream: &RngStream,
) -> Result<LpHolderEstimate>
where
    S: Fn(&RngStream) -> Result<SampledPath> + Sync,
{
    check_common(p, alpha, samples, oversample)?;
    let with_pairs = kind == EstimateKind::HolderOfLp;
    let moments = PairMoments::accumulate(sampler, p, samples, oversample, stream, with_pairs)?;
    moments.estimate(kind, alpha, norm)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic_schemes::sample_brownian;

    fn fixed_path() -> SampledPath {
        SampledPath::scalar(Partition::uniform(4, 1.0).unwrap(), vec![0.0, 0.3, -0.2, 0.5, 0.1]).unwrap()
    }

    #[test]
    fn zero_sampler_gives_zero() {
        let g = Partition::uniform(4, 1.0).unwrap();
        let zero = |_: &RngStream| Ok(SampledPath::zeros(g.clone(), 2));
        let s = RngStream::new(0);
        let a = estimate_lp_of_holder(&zero, 2.0, 0.5, NormKind::Full, 10, 2, &s).unwrap();
        assert_eq!((a.value, a.std_error), (0.0, 0.0));
        for kind in [EstimateKind::SupOfLp, EstimateKind::HolderOfLp] {
            let b = estimate_holder_of_lp(&zero, 2.0, 0.5, kind, NormKind::Full, 10, 2, &s).unwrap();
            assert_eq!(b.value, 0.0);
        }
    }

    #[test]
    fn deterministic_sampler_gives_its_norm() {
        let f = fixed_path();
        let sampler = |_: &RngStream| Ok(f.clone());
        let s = RngStream::new(0);
        let est = estimate_lp_of_holder(&sampler, 3.0, 0.4, NormKind::Full, 7, 3, &s).unwrap();
        let exact = f.holder_norm(0.4, 3).unwrap();
        assert!((est.value - exact).abs() < 1e-14 * exact);
        assert!(est.std_error < 1e-12);
        let sup = estimate_holder_of_lp(&sampler, 3.0, 0.4, EstimateKind::SupOfLp, NormKind::Full, 7, 1, &s).unwrap();
        assert!((sup.value - 0.5).abs() < 1e-15);
        let semi = estimate_holder_of_lp(&sampler, 3.0, 0.4, EstimateKind::HolderOfLp, NormKind::Seminorm, 7, 3, &s).unwrap();
        let exact = f.holder_seminorm(0.4, DistanceBand::Full, 3).unwrap();
        assert!((semi.value - exact).abs() < 1e-14);
    }

    #[test]
    fn rejects_single_sample() {
        let f = fixed_path();
        let sampler = |_: &RngStream| Ok(f.clone());
        let s = RngStream::new(0);
        assert!(estimate_lp_of_holder(&sampler, 2.0, 0.0, NormKind::Full, 1, 1, &s).is_err());
        assert!(estimate_holder_of_lp(&sampler, 2.0, 0.0, EstimateKind::SupOfLp, NormKind::Full, 1, 1, &s).is_err());
    }

    #[test]
    fn empirical_norm_ordering_holds_exactly() {
        let grid = Partition::uniform(16, 1.0).unwrap();
        let sampler = |s: &RngStream| sample_brownian(&grid, 2, s);
        let s = RngStream::new(4);
        for alpha in [0.0, 0.3, 0.5] {
            let lp = estimate_lp_of_holder(&sampler, 2.0, alpha, NormKind::Seminorm, 300, 2, &s).unwrap();
            let hl = estimate_holder_of_lp(&sampler, 2.0, alpha, EstimateKind::HolderOfLp, NormKind::Seminorm, 300, 2, &s).unwrap();
            assert!(hl.value <= lp.value * (1.0 + 1e-12));
        }
    }

    #[test]
    fn chunking_does_not_change_the_result() {
        let grid = Partition::uniform(8, 1.0).unwrap();
        let sampler = |s: &RngStream| sample_brownian(&grid, 1, s);
        let s = RngStream::new(8);
        let a = PairMoments::accumulate(&sampler, 2.0, 700, 1, &s, true).unwrap();
        let b = PairMoments::accumulate(&sampler, 2.0, 700, 1, &s, true).unwrap();
        assert_eq!(a.sup_of_lp().0.to_bits(), b.sup_of_lp().0.to_bits());
    }
}
