use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_paths::Partition;

/// The set of admissible distances `|t - s|` in a restricted Hölder seminorm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistanceBand {
    /// `(0, inf)`
    Full,
    /// `(c, inf)`
    Above(f64),
    /// `[c, inf)`
    AtLeast(f64),
    /// `(0, c]`
    AtMost(f64),
    /// `(0, c)`
    Below(f64),
}

impl DistanceBand {
    pub fn threshold(&self) -> Option<f64> {
        match *self {
            DistanceBand::Full => None,
            DistanceBand::Above(c)
            | DistanceBand::AtLeast(c)
            | DistanceBand::AtMost(c)
            | DistanceBand::Below(c) => Some(c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.threshold() {
            Some(c) if !(c > 0.0) => Err(Error::invalid(format!(
                "band threshold must be positive, got {c}"
            ))),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn contains(&self, d: f64) -> bool {
        match *self {
            DistanceBand::Full => d > 0.0,
            DistanceBand::Above(c) => d > c,
            DistanceBand::AtLeast(c) => d >= c,
            DistanceBand::AtMost(c) => d > 0.0 && d <= c,
            DistanceBand::Below(c) => d > 0.0 && d < c,
        }
    }

    /// True if no distance `>= d` can belong to the band.
    #[inline]
    fn exhausted_at(&self, d: f64) -> bool {
        match *self {
            DistanceBand::AtMost(c) => d > c,
            DistanceBand::Below(c) => d >= c,
            _ => false,
        }
    }
}

// Above this many points the pairwise denominators are computed on the fly.
const TABLE_LIMIT: usize = 2049;

/// Pairwise Hölder seminorm on a fixed grid, reusable across many paths.
///
/// Pairs are visited lag by lag. The smallest gap at lag `k` is
/// nondecreasing in `k`, so once `diam / gap_min(k)^r` drops below the
/// running maximum no later lag can improve it and the traversal stops.
#[derive(Debug, Clone)]
pub struct HolderEvaluator {
    points: Vec<f64>,
    r: f64,
    band: DistanceBand,
    lag_min_gap: Vec<f64>,
    // denominators |t_{i+k} - t_i|^r laid out lag by lag
    denominators: Option<Vec<f64>>,
}

impl HolderEvaluator {
    pub fn new(grid: &Partition, r: f64, band: DistanceBand) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("Hölder exponent must lie in [0, 1], got {r}")));
        }
        band.validate()?;
        let points = grid.points().to_vec();
        let n = points.len();
        let mut lag_min_gap = vec![0.0; n];
        for (k, slot) in lag_min_gap.iter_mut().enumerate().skip(1) {
            *slot = (0..n - k)
                .map(|i| points[i + k] - points[i])
                .fold(f64::INFINITY, f64::min);
        }
        let denominators = if n <= TABLE_LIMIT && r != 0.0 && r != 1.0 {
            let mut d = Vec::with_capacity(n * (n - 1) / 2);
            for k in 1..n {
                d.extend((0..n - k).map(|i| (points[i + k] - points[i]).powf(r)));
            }
            Some(d)
        } else {
            None
        };
        Ok(Self {
            points,
            r,
            band,
            lag_min_gap,
            denominators,
        })
    }

    pub fn exponent(&self) -> f64 {
        self.r
    }

    pub fn band(&self) -> DistanceBand {
        self.band
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    fn denom(&self, gap: f64) -> f64 {
        if self.r == 0.0 {
            1.0
        } else if self.r == 1.0 {
            gap
        } else {
            gap.powf(self.r)
        }
    }

    pub fn seminorm(&self, values: &[f64], dim: usize) -> f64 {
        self.seminorm_with_argmax(values, dim).0
    }

    /// Seminorm together with the maximizing index pair `(i, j)`, `i < j`.
    pub fn seminorm_with_argmax(&self, values: &[f64], dim: usize) -> (f64, Option<(usize, usize)>) {
        let n = self.points.len();
        debug_assert_eq!(values.len(), n * dim);
        if n < 2 {
            return (0.0, None);
        }
        if self.band == DistanceBand::Full {
            if self.r == 1.0 {
                return self.adjacent_slopes(values, dim);
            }
            if self.r == 0.0 && dim == 1 {
                return range_of(values);
            }
        }

        let diam = diameter_bound(values, dim);
        if diam == 0.0 {
            return (0.0, None);
        }
        let mut best = 0.0;
        let mut arg = None;
        let mut offset = 0;
        for k in 1..n {
            let gmin = self.lag_min_gap[k];
            if self.band.exhausted_at(gmin) || diam / self.denom(gmin) <= best {
                break;
            }
            for i in 0..n - k {
                let j = i + k;
                let gap = self.points[j] - self.points[i];
                if !self.band.contains(gap) {
                    continue;
                }
                let dist = distance(values, dim, i, j);
                if dist == 0.0 {
                    continue;
                }
                let den = match &self.denominators {
                    Some(table) => table[offset + i],
                    None => self.denom(gap),
                };
                let ratio = dist / den;
                if ratio > best {
                    best = ratio;
                    arg = Some((i, j));
                }
            }
            offset += n - k;
        }
        (best, arg)
    }

    fn adjacent_slopes(&self, values: &[f64], dim: usize) -> (f64, Option<(usize, usize)>) {
        let mut best = 0.0;
        let mut arg = None;
        for i in 0..self.points.len() - 1 {
            let ratio = distance(values, dim, i, i + 1) / (self.points[i + 1] - self.points[i]);
            if ratio > best {
                best = ratio;
                arg = Some((i, i + 1));
            }
        }
        (best, arg)
    }
}

fn range_of(values: &[f64]) -> (f64, Option<(usize, usize)>) {
    let (mut lo, mut hi) = (0, 0);
    for (i, v) in values.iter().enumerate() {
        if *v < values[lo] {
            lo = i;
        }
        if *v > values[hi] {
            hi = i;
        }
    }
    let d = values[hi] - values[lo];
    if d == 0.0 {
        (0.0, None)
    } else {
        (d, Some((lo.min(hi), lo.max(hi))))
    }
}

#[inline]
pub(crate) fn distance(values: &[f64], dim: usize, i: usize, j: usize) -> f64 {
    if dim == 1 {
        (values[j] - values[i]).abs()
    } else {
        let a = &values[i * dim..(i + 1) * dim];
        let b = &values[j * dim..(j + 1) * dim];
        a.iter()
            .zip(b)
            .map(|(x, y)| (y - x) * (y - x))
            .sum::<f64>()
            .sqrt()
    }
}

// Upper bound on max_{i,j} |f_i - f_j|: exact range for d = 1, twice the
// largest distance to the first point otherwise.
fn diameter_bound(values: &[f64], dim: usize) -> f64 {
    if dim == 1 {
        range_of(values).0
    } else {
        let n = values.len() / dim;
        2.0 * (1..n).map(|i| distance(values, dim, 0, i)).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(points: &[f64], values: &[f64], dim: usize, r: f64, band: DistanceBand) -> f64 {
        let n = points.len();
        let mut best = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                let gap = points[j] - points[i];
                if band.contains(gap) {
                    best = best.max(distance(values, dim, i, j) / gap.powf(r));
                }
            }
        }
        best
    }

    #[test]
    fn band_membership_respects_interval_kinds() {
        assert!(!DistanceBand::Above(0.5).contains(0.5));
        assert!(DistanceBand::AtLeast(0.5).contains(0.5));
        assert!(DistanceBand::AtMost(0.5).contains(0.5));
        assert!(!DistanceBand::Below(0.5).contains(0.5));
        assert!(DistanceBand::Full.contains(1e300));
        assert!(DistanceBand::Below(0.0).validate().is_err());
    }

    #[test]
    fn early_exit_agrees_with_brute_force() {
        let points: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin().abs() * 0.01 + i as f64 * 0.05).collect();
        let mut sorted = points.clone();
        sorted[0] = 0.0;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let grid = Partition::new(sorted.clone()).unwrap();
        for dim in [1, 3] {
            let values: Vec<f64> = (0..40 * dim).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
            for r in [0.0, 0.2, 0.5, 0.9, 1.0] {
                for band in [
                    DistanceBand::Full,
                    DistanceBand::Above(0.3),
                    DistanceBand::AtLeast(0.3),
                    DistanceBand::AtMost(0.3),
                    DistanceBand::Below(0.3),
                ] {
                    let eval = HolderEvaluator::new(&grid, r, band).unwrap();
                    let fast = eval.seminorm(&values, dim);
                    let slow = brute_force(&sorted, &values, dim, r, band);
                    assert!((fast - slow).abs() <= 1e-14 * slow.max(1.0), "r={r} {band:?}: {fast} vs {slow}");
                }
            }
        }
    }
}
