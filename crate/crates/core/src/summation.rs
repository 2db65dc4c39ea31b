//! Fixed-shape pairwise summation.
//!
//! Every reduction in the crate goes through these helpers so that the
//! result depends only on the order of the inputs, never on how work was
//! scheduled across threads.

const BLOCK: usize = 8;

/// Pairwise (tree) sum of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(xs.len(), |i| xs[i])
}

/// Pairwise sum of `f(0), ..., f(n-1)`.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        let len = hi - lo;
        if len <= BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + len / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, &f)
}

/// Element-wise pairwise reduction of equally sized vectors, ordered by index.
pub fn pairwise_sum_vectors(parts: &[Vec<f64>]) -> Vec<f64> {
    fn rec(parts: &[Vec<f64>]) -> Vec<f64> {
        match parts.len() {
            0 => Vec::new(),
            1 => parts[0].clone(),
            n => {
                let (a, b) = parts.split_at(n / 2);
                let mut left = rec(a);
                let right = rec(b);
                for (l, r) in left.iter_mut().zip(&right) {
                    *l += r;
                }
                left
            }
        }
    }
    rec(parts)
}

/// Sample mean and unbiased variance with pairwise accumulation.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss = pairwise_sum_by(n, |i| {
        let d = xs[i] - mean;
        d * d
    });
    (mean, ss / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn vector_reduction() {
        let parts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(pairwise_sum_vectors(&parts), vec![9.0, 12.0]);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let (m, v) = mean_and_variance(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(v, 0.0);
    }
}
