use crate::error::{Error, Result};
use crate::grid_paths::{Partition, SampledPath};
use crate::stochastic_schemes::rng::RngStream;

/// Independent `N(0, gap * I_m)` increments, segment-major.
pub fn brownian_increments(theta: &Partition, m: usize, stream: &RngStream) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("noise dimension m must be >= 1"));
    }
    let mut normals = stream.normals();
    let mut out = Vec::with_capacity(theta.segments() * m);
    for w in theta.points().windows(2) {
        let scale = (w[1] - w[0]).sqrt();
        for _ in 0..m {
            out.push(scale * normals.next_normal());
        }
    }
    Ok(out)
}

/// An `m`-dimensional Brownian path on `theta`, started at 0.
pub fn sample_brownian(theta: &Partition, m: usize, stream: &RngStream) -> Result<SampledPath> {
    let incs = brownian_increments(theta, m, stream)?;
    let mut values = vec![0.0; theta.len() * m];
    for j in 0..theta.segments() {
        for k in 0..m {
            values[(j + 1) * m + k] = values[j * m + k] + incs[j * m + k];
        }
    }
    SampledPath::new(theta.clone(), values, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_zero_and_two_point_grid_is_one_increment() {
        let theta = Partition::uniform(1, 2.0).unwrap();
        let s = RngStream::new(9).derive("w", 0);
        let w = sample_brownian(&theta, 3, &s).unwrap();
        assert_eq!(w.value(0), &[0.0, 0.0, 0.0]);
        let mut z = s.normals();
        for k in 0..3 {
            assert_eq!(w.value(1)[k], 2f64.sqrt() * z.next_normal());
        }
    }

    #[test]
    fn coarse_increments_aggregate_fine_ones_bit_exactly() {
        let fine = Partition::uniform(64, 1.0).unwrap();
        let coarse = Partition::uniform(8, 1.0).unwrap();
        let s = RngStream::new(5).derive("w", 3);
        let w = sample_brownian(&fine, 1, &s).unwrap();
        let incs = brownian_increments(&fine, 1, &s).unwrap();
        let restricted = w.restrict(&coarse).unwrap();
        let mut acc = 0.0;
        for k in 0..8 {
            for j in 0..8 {
                acc += incs[k * 8 + j];
            }
            assert_eq!(restricted.value(k + 1)[0].to_bits(), acc.to_bits());
        }
    }
}
