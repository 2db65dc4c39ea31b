//! Time partitions, sampled paths and their piecewise-affine extensions.
//!
//! A [`SampledPath`] stores the values of an `R^d`-valued function on the
//! points of a [`Partition`]. Everything downstream treats the stored data
//! as the piecewise-affine function through those values, so sup norms are
//! exact and Hölder seminorms are exact for exponents 0 and 1; for exponents
//! in between they are evaluated on an oversampled grid.

mod holder;
mod io;

pub use holder::{DistanceBand, HolderEvaluator};
pub(crate) use holder::distance as holder_distance;
pub use io::{format_float, read_path_csv, write_path_csv};

use crate::error::{Error, Result};

/// A finite grid `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    points: Vec<f64>,
}

impl Partition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a partition needs at least two points"));
        }
        if points[0] != 0.0 {
            return Err(Error::invalid(format!(
                "partition must start at 0, got {}",
                points[0]
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("partition points must be finite"));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "partition must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    /// `{0, T/N, ..., T}`; points are computed as `T * (n / N)` so that
    /// nested uniform grids share their common points bit for bit.
    pub fn uniform(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("uniform partition needs N >= 1"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let nf = n as f64;
        let points = (0..=n).map(|i| horizon * (i as f64 / nf)).collect();
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// `(d_max, d_min)`.
    pub fn mesh_stats(&self) -> (f64, f64) {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold((0.0_f64, f64::INFINITY), |(mx, mn), g| (mx.max(g), mn.min(g)))
    }

    pub fn d_max(&self) -> f64 {
        self.mesh_stats().0
    }

    pub fn d_min(&self) -> f64 {
        self.mesh_stats().1
    }

    /// Index of `t` if it is (exactly) a grid point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.points
            .binary_search_by(|p| p.partial_cmp(&t).unwrap())
            .ok()
    }

    /// Segment `j` with `t_j <= t <= t_{j+1}`.
    pub fn locate(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::OutOfRange {
                value: t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let idx = self.points.partition_point(|&p| p <= t);
        Ok(idx.saturating_sub(1).min(self.segments() - 1))
    }

    /// Indices of the points of `self` inside `fine`, or an error if the
    /// grids are not nested.
    pub fn embedding_in(&self, fine: &Partition) -> Result<Vec<usize>> {
        if self.horizon() != fine.horizon() {
            return Err(Error::invalid(format!(
                "grids have different horizons ({} vs {})",
                self.horizon(),
                fine.horizon()
            )));
        }
        self.points
            .iter()
            .map(|&t| {
                fine.index_of(t).ok_or_else(|| {
                    Error::invalid(format!("grid point {t} is not a point of the finer grid"))
                })
            })
            .collect()
    }

    pub fn is_nested_in(&self, fine: &Partition) -> bool {
        self.embedding_in(fine).is_ok()
    }

    /// Grid with `k - 1` equispaced points inserted into every segment.
    pub fn refined(&self, k: usize) -> Result<Partition> {
        if k == 0 {
            return Err(Error::invalid("oversample factor must be >= 1"));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let mut points = Vec::with_capacity(self.segments() * k + 1);
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            points.push(a);
            for i in 1..k {
                points.push(a + (b - a) * (i as f64 / k as f64));
            }
        }
        points.push(self.horizon());
        Ok(Partition { points })
    }
}

pub fn uniform_partition(n: usize, horizon: f64) -> Result<Partition> {
    Partition::uniform(n, horizon)
}

pub fn mesh_stats(theta: &Partition) -> (f64, f64) {
    theta.mesh_stats()
}

/// Values of a path in `R^d` on a partition, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: Partition,
    values: Vec<f64>,
    dim: usize,
}

impl SampledPath {
    pub fn new(grid: Partition, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("state dimension must be >= 1"));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::invalid(format!(
                "expected {} values ({} points x dim {}), got {}",
                grid.len() * dim,
                grid.len(),
                dim,
                values.len()
            )));
        }
        Ok(Self { grid, values, dim })
    }

    pub fn scalar(grid: Partition, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values, 1)
    }

    pub fn zeros(grid: Partition, dim: usize) -> Self {
        let values = vec![0.0; grid.len() * dim];
        Self { grid, values, dim }
    }

    pub fn from_fn<F: FnMut(f64) -> Vec<f64>>(grid: Partition, dim: usize, mut f: F) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &t in grid.points() {
            let v = f(t);
            if v.len() != dim {
                return Err(Error::invalid("function returned a vector of the wrong dimension"));
            }
            values.extend_from_slice(&v);
        }
        Self::new(grid, values, dim)
    }

    pub fn grid(&self) -> &Partition {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[f]_θ(t)`; exact stored value at grid points.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.interpolate_into(t, &mut out)?;
        Ok(out)
    }

    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let j = self.grid.locate(t)?;
        self.interpolate_on_segment(j, t, out);
        Ok(())
    }

    fn interpolate_on_segment(&self, j: usize, t: f64, out: &mut [f64]) {
        let (a, b) = (self.grid.points[j], self.grid.points[j + 1]);
        if t == a {
            out.copy_from_slice(self.value(j));
        } else if t == b {
            out.copy_from_slice(self.value(j + 1));
        } else {
            let (left, right) = (self.value(j), self.value(j + 1));
            let h = b - a;
            for k in 0..self.dim {
                out[k] = ((b - t) * left[k] + (t - a) * right[k]) / h;
            }
        }
    }

    /// Evaluates the affine extension at every point of `target`.
    pub fn resample(&self, target: &Partition) -> Result<SampledPath> {
        if target.horizon() != self.grid.horizon() {
            return Err(Error::invalid(format!(
                "cannot resample onto a grid with horizon {} (path horizon {})",
                target.horizon(),
                self.grid.horizon()
            )));
        }
        let mut values = vec![0.0; target.len() * self.dim];
        let mut j = 0;
        let last = self.grid.segments() - 1;
        for (i, &t) in target.points().iter().enumerate() {
            while j < last && self.grid.points[j + 1] <= t {
                j += 1;
            }
            let out = &mut values[i * self.dim..(i + 1) * self.dim];
            self.interpolate_on_segment(j, t, out);
        }
        SampledPath::new(target.clone(), values, self.dim)
    }

    pub fn refine(&self, oversample: usize) -> Result<SampledPath> {
        if oversample == 1 {
            return Ok(self.clone());
        }
        let fine = self.grid.refined(oversample)?;
        self.resample(&fine)
    }

    /// Copies the values at the points of `coarse` (which must be nested).
    pub fn restrict(&self, coarse: &Partition) -> Result<SampledPath> {
        let idx = coarse.embedding_in(&self.grid)?;
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for i in idx {
            values.extend_from_slice(self.value(i));
        }
        SampledPath::new(coarse.clone(), values, self.dim)
    }

    /// `[f]_θ` evaluated on this path's own grid.
    pub fn interpolant_on(&self, theta: &Partition) -> Result<SampledPath> {
        self.restrict(theta)?.resample(&self.grid)
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| euclidean(self.value(i)))
            .fold(0.0, f64::max)
    }

    pub fn holder_seminorm(&self, r: f64, band: DistanceBand, oversample: usize) -> Result<f64> {
        let refined = self.refine(oversample)?;
        let eval = HolderEvaluator::new(refined.grid(), r, band)?;
        Ok(eval.seminorm(refined.values(), refined.dim()))
    }

    pub fn holder_norm(&self, r: f64, oversample: usize) -> Result<f64> {
        let refined = self.refine(oversample)?;
        let eval = HolderEvaluator::new(refined.grid(), r, DistanceBand::Full)?;
        Ok(refined.sup_norm() + eval.seminorm(refined.values(), refined.dim()))
    }

    pub fn scaled(&self, lambda: f64) -> SampledPath {
        let values = self.values.iter().map(|v| lambda * v).collect();
        SampledPath {
            grid: self.grid.clone(),
            values,
            dim: self.dim,
        }
    }

    fn zip_with(&self, other: &SampledPath, op: impl Fn(f64, f64) -> f64) -> Result<SampledPath> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::invalid("paths live on different grids or dimensions"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| op(*a, *b))
            .collect();
        Ok(SampledPath {
            grid: self.grid.clone(),
            values,
            dim: self.dim,
        })
    }

    pub fn add(&self, other: &SampledPath) -> Result<SampledPath> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SampledPath) -> Result<SampledPath> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Applies `f` to the state vector at every grid point.
    pub fn map_states<F: Fn(&[f64]) -> Vec<f64>>(&self, out_dim: usize, f: F) -> Result<SampledPath> {
        let mut values = Vec::with_capacity(self.len() * out_dim);
        for i in 0..self.len() {
            let v = f(self.value(i));
            if v.len() != out_dim {
                return Err(Error::invalid("state map returned the wrong dimension"));
            }
            values.extend_from_slice(&v);
        }
        SampledPath::new(self.grid.clone(), values, out_dim)
    }
}

pub(crate) fn euclidean(v: &[f64]) -> f64 {
    if v.len() == 1 {
        v[0].abs()
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub(crate) fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        (a[0] - b[0]).abs()
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

pub fn interpolate_affine(path: &SampledPath, t: f64) -> Result<Vec<f64>> {
    path.interpolate(t)
}

pub fn refine(path: &SampledPath, oversample: usize) -> Result<SampledPath> {
    path.refine(oversample)
}

pub fn restrict(path: &SampledPath, coarse: &Partition) -> Result<SampledPath> {
    path.restrict(coarse)
}

pub fn sup_norm(path: &SampledPath) -> f64 {
    path.sup_norm()
}

pub fn holder_seminorm(path: &SampledPath, r: f64, band: DistanceBand, oversample: usize) -> Result<f64> {
    path.holder_seminorm(r, band, oversample)
}

pub fn holder_norm(path: &SampledPath, r: f64, oversample: usize) -> Result<f64> {
    path.holder_norm(r, oversample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(points: &[f64]) -> Partition {
        Partition::new(points.to_vec()).unwrap()
    }

    #[test]
    fn uniform_partition_examples() {
        assert_eq!(Partition::uniform(1, 1.0).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(
            Partition::uniform(4, 2.0).unwrap().points(),
            &[0.0, 0.5, 1.0, 1.5, 2.0]
        );
        let (mx, mn) = Partition::uniform(3, 1.0).unwrap().mesh_stats();
        assert!((mx - 1.0 / 3.0).abs() < 1e-15 && (mn - 1.0 / 3.0).abs() < 1e-15);
        assert!(Partition::uniform(0, 1.0).is_err());
        assert!(Partition::uniform(3, 0.0).is_err());
        assert!(Partition::uniform(3, -1.0).is_err());
    }

    #[test]
    fn nested_uniform_grids_share_points_exactly() {
        for (n, t) in [(3usize, 0.7), (5, 1.3), (7, std::f64::consts::PI)] {
            let coarse = Partition::uniform(n, t).unwrap();
            let fine = Partition::uniform(n * 8, t).unwrap();
            assert!(coarse.is_nested_in(&fine));
        }
    }

    #[test]
    fn mesh_stats_examples() {
        let (mx, mn) = grid(&[0.0, 0.2, 1.0]).mesh_stats();
        assert!((mx - 0.8).abs() < 1e-15);
        assert_eq!(mn, 0.2);
        assert_eq!(Partition::uniform(8, 1.0).unwrap().mesh_stats(), (0.125, 0.125));
        assert_eq!(grid(&[0.0, 1.0]).mesh_stats(), (1.0, 1.0));
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(Partition::new(vec![0.0]).is_err());
        assert!(Partition::new(vec![0.1, 1.0]).is_err());
        assert!(Partition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let p = SampledPath::scalar(grid(&[0.0, 1.0]), vec![0.0, 2.0]).unwrap();
        assert_eq!(p.interpolate(0.25).unwrap(), vec![0.5]);
        let q = SampledPath::scalar(grid(&[0.0, 0.2, 1.0]), vec![0.0, 1.0, 0.0]).unwrap();
        assert!((q.interpolate(0.6).unwrap()[0] - 0.5).abs() < 1e-15);
        assert_eq!(q.interpolate(0.2).unwrap(), vec![1.0]);
        assert!(matches!(q.interpolate(1.5), Err(Error::OutOfRange { .. })));
        assert!(q.interpolate(-0.1).is_err());
    }

    #[test]
    fn grid_point_interpolation_is_bit_exact() {
        let g = grid(&[0.0, 0.1, 0.35, 0.9, 1.7]);
        let vals = vec![0.1 + 0.2, -1.0 / 3.0, std::f64::consts::E, 1e-17, -0.0];
        let p = SampledPath::scalar(g.clone(), vals.clone()).unwrap();
        for (i, &t) in g.points().iter().enumerate() {
            assert_eq!(p.interpolate(t).unwrap()[0].to_bits(), vals[i].to_bits());
        }
    }

    #[test]
    fn refine_examples() {
        let p = SampledPath::scalar(grid(&[0.0, 1.0]), vec![0.0, 1.0]).unwrap();
        assert_eq!(p.refine(1).unwrap(), p);
        let r = p.refine(2).unwrap();
        assert_eq!(r.grid().points(), &[0.0, 0.5, 1.0]);
        assert_eq!(r.values(), &[0.0, 0.5, 1.0]);
        assert!(p.refine(0).is_err());
        let q = SampledPath::scalar(grid(&[0.0, 0.3, 1.0]), vec![1.0, -4.0, 2.0]).unwrap();
        assert_eq!(q.refine(7).unwrap().sup_norm(), q.sup_norm());
    }

    #[test]
    fn restrict_examples() {
        let fine = Partition::uniform(4, 1.0).unwrap();
        let p = SampledPath::scalar(fine.clone(), vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.restrict(&fine).unwrap(), p);
        let c = p.restrict(&Partition::uniform(2, 1.0).unwrap()).unwrap();
        assert_eq!(c.values(), &[0.0, 2.0, 4.0]);
        let e = p.restrict(&grid(&[0.0, 1.0])).unwrap();
        assert_eq!(e.values(), &[0.0, 4.0]);
        assert!(p.restrict(&Partition::uniform(3, 1.0).unwrap()).is_err());
    }

    #[test]
    fn sup_norm_examples() {
        let g = Partition::uniform(2, 1.0).unwrap();
        assert_eq!(SampledPath::scalar(g.clone(), vec![5.0; 3]).unwrap().sup_norm(), 5.0);
        assert_eq!(SampledPath::scalar(g.clone(), vec![0.0, -3.0, 2.0]).unwrap().sup_norm(), 3.0);
        assert_eq!(SampledPath::zeros(g, 2).sup_norm(), 0.0);
    }

    #[test]
    fn seminorm_examples() {
        let g = Partition::uniform(2, 1.0).unwrap();
        let id = SampledPath::scalar(g.clone(), vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(id.holder_seminorm(1.0, DistanceBand::Full, 1).unwrap(), 1.0);
        let c = SampledPath::scalar(g, vec![5.0; 3]).unwrap();
        for r in [0.0, 0.3, 1.0] {
            for band in [DistanceBand::Full, DistanceBand::AtMost(0.5), DistanceBand::Above(0.1)] {
                assert_eq!(c.holder_seminorm(r, band, 3).unwrap(), 0.0);
            }
        }
        // brute force over the 10 pairs of the tent sampled on {0, 1/4, 1/2, 3/4, 1}
        let g4 = Partition::uniform(4, 1.0).unwrap();
        let tent = SampledPath::from_fn(g4, 1, |t| vec![(t - 0.5).abs()]).unwrap();
        let v = tent.holder_seminorm(0.5, DistanceBand::Full, 1).unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(tent.holder_seminorm(1.5, DistanceBand::Full, 1).is_err());
        assert!(tent.holder_seminorm(-0.1, DistanceBand::Full, 1).is_err());
    }

    #[test]
    fn norm_examples() {
        let g = Partition::uniform(2, 1.0).unwrap();
        let c = SampledPath::scalar(g.clone(), vec![5.0; 3]).unwrap();
        assert_eq!(c.holder_norm(0.5, 4).unwrap(), 5.0);
        let id = SampledPath::scalar(g.clone(), vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(id.holder_norm(1.0, 4).unwrap(), 2.0);
        assert_eq!(SampledPath::zeros(g, 1).holder_norm(0.3, 4).unwrap(), 0.0);
    }

    #[test]
    fn interpolant_on_own_grid_is_identity() {
        let g = grid(&[0.0, 0.25, 0.6, 1.0]);
        let p = SampledPath::scalar(g.clone(), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(p.interpolant_on(&g).unwrap(), p);
    }
}
