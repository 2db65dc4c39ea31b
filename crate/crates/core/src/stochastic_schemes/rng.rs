//! Labelled random streams.
//!
//! A stream is identified by a master seed plus a path of `(tag, index)`
//! labels. Its 256-bit key is a SHA-256 chain over that path, and the key
//! seeds a ChaCha8 block cipher used in counter mode. Streams are plain
//! values: deriving a child never touches the parent's state, so any
//! sample can be regenerated in isolation and in any order.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

#[derive(Clone, PartialEq, Eq)]
pub struct RngStream {
    master_seed: u64,
    label_path: Vec<(String, u64)>,
    key: [u8; 32],
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("master_seed", &self.master_seed)
            .field("label_path", &self.label_path)
            .finish()
    }
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"holderlab.stream.v1");
        h.update(master_seed.to_le_bytes());
        Self {
            master_seed,
            label_path: Vec::new(),
            key: h.finalize().into(),
        }
    }

    pub fn derive(&self, tag: &str, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag.as_bytes());
        h.update(index.to_le_bytes());
        let mut label_path = self.label_path.clone();
        label_path.push((tag.to_string(), index));
        Self {
            master_seed: self.master_seed,
            label_path,
            key: h.finalize().into(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label_path(&self) -> &[(String, u64)] {
        &self.label_path
    }

    /// First 64 bits of the key; identifies the stream in reports.
    pub fn fingerprint(&self) -> u64 {
        u64::from_le_bytes(self.key[..8].try_into().unwrap())
    }

    pub fn uniforms(&self) -> Uniforms {
        Uniforms {
            rng: ChaCha8Rng::from_seed(self.key),
        }
    }

    pub fn normals(&self) -> Normals {
        Normals {
            uniforms: self.uniforms(),
        }
    }
}

pub fn derive_stream(master_seed: u64, tag: &str, index: u64) -> RngStream {
    RngStream::new(master_seed).derive(tag, index)
}

pub struct Uniforms {
    rng: ChaCha8Rng,
}

impl Uniforms {
    /// Uniform on the open interval (0, 1), 53 bits.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform on [-1, 1).
    #[inline]
    pub fn next_symmetric(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (2.0 / 9_007_199_254_740_992.0) - 1.0
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn next_range(&mut self, lo: u64, hi: u64) -> u64 {
        let span = hi - lo + 1;
        lo + ((self.rng.next_u64() as u128 * span as u128) >> 64) as u64
    }

    #[inline]
    pub fn next_sign(&mut self) -> f64 {
        if self.rng.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Standard normal variates by inverse CDF of the uniform stream.
pub struct Normals {
    uniforms: Uniforms,
}

impl Normals {
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniforms.next_open01())
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.next_normal();
        }
    }
}

/// Wichura's AS241 (PPND16) rational approximation of Φ^{-1}, accurate to
/// about 1e-16 relative.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_7)
                * r
                + 45921.953_931_549_87)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_71)
                * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_labels_same_sequence() {
        let a = derive_stream(42, "w", 0);
        let b = RngStream::new(42).derive("w", 0);
        assert_eq!(a, b);
        let (mut x, mut y) = (a.normals(), b.normals());
        for _ in 0..100 {
            assert_eq!(x.next_normal().to_bits(), y.next_normal().to_bits());
        }
    }

    #[test]
    fn labels_are_not_ambiguous() {
        let root = RngStream::new(1);
        assert_ne!(root.derive("ab", 1).fingerprint(), root.derive("a", 1).fingerprint());
        assert_ne!(
            root.derive("a", 1).derive("b", 2).fingerprint(),
            root.derive("a", 2).derive("b", 1).fingerprint()
        );
        assert_ne!(RngStream::new(1).fingerprint(), RngStream::new(2).fingerprint());
    }

    #[test]
    fn inverse_cdf_reference_points() {
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert!((inverse_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((inverse_normal_cdf(0.025) + 1.959_963_984_540_054).abs() < 1e-14);
        assert!((inverse_normal_cdf(1e-10) + 6.361_340_902_404_056).abs() < 1e-12);
        assert!((inverse_normal_cdf(0.8413447460685429) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn uniform_range_stays_in_bounds() {
        let mut u = RngStream::new(3).uniforms();
        for _ in 0..10_000 {
            let k = u.next_range(3, 33);
            assert!((3..=33).contains(&k));
            let s = u.next_symmetric();
            assert!((-1.0..1.0).contains(&s));
        }
    }
}
