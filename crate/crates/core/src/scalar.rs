//! Scalar abstractions shared by the index, scoring and metric code.
//!
//! Vector math (distances, scaling, thresholds) is written against [`Real`],
//! which covers `f32` and `f64`. Metric arithmetic only needs field operations
//! and is written against [`Field`], which additionally admits exact rationals
//! so metric identities can be checked without rounding.

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating point scalar used for embeddings, distances and scores.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Bytes per value in the on-disk little-endian encoding.
    const WIDTH: usize;
    /// Tag written into index files so an `f32` index is never read as `f64`.
    const TAG: u8;

    fn from_f64_lossy(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn dot(a: &[Self], b: &[Self]) -> Self {
        lanes(a, b, |x, y| x * y)
    }

    #[inline]
    fn squared_l2(a: &[Self], b: &[Self]) -> Self {
        lanes(a, b, |x, y| (x - y) * (x - y))
    }
}

impl Real for f32 {
    const WIDTH: usize = 4;
    const TAG: u8 = 4;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    #[inline]
    fn dot(a: &[f32], b: &[f32]) -> f32 {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { wide::dot(a, b) };
        }
        lanes(a, b, |x, y| x * y)
    }

    #[inline]
    fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { wide::squared_l2(a, b) };
        }
        lanes(a, b, |x, y| (x - y) * (x - y))
    }
}

/// The same lane kernel compiled for 256-bit registers. Lane order and the
/// final reduction are unchanged, so results match the portable path bit for
/// bit.
#[cfg(target_arch = "x86_64")]
mod wide {
    use std::arch::x86_64::*;

    /// Eight lanes in one register, then `(l0+l4 + l1+l5) + (l2+l6 + l3+l7)`
    /// and the scalar tail.
    #[target_feature(enable = "avx2")]
    unsafe fn kernel(a: &[f32], b: &[f32], diff: bool) -> f32 {
        let n = a.len().min(b.len());
        let chunks = n / 8;
        let mut acc = _mm256_setzero_ps();
        for c in 0..chunks {
            let x = _mm256_loadu_ps(a.as_ptr().add(c * 8));
            let y = _mm256_loadu_ps(b.as_ptr().add(c * 8));
            let t = if diff {
                let d = _mm256_sub_ps(x, y);
                _mm256_mul_ps(d, d)
            } else {
                _mm256_mul_ps(x, y)
            };
            acc = _mm256_add_ps(acc, t);
        }
        let s = _mm_add_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps::<1>(acc));
        let h = _mm_hadd_ps(s, s);
        let mut sum = _mm_cvtss_f32(h) + _mm_cvtss_f32(_mm_movehdup_ps(h));
        for i in chunks * 8..n {
            let (x, y) = (a[i], b[i]);
            sum += if diff { (x - y) * (x - y) } else { x * y };
        }
        sum
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn dot(a: &[f32], b: &[f32]) -> f32 {
        kernel(a, b, false)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
        kernel(a, b, true)
    }
}

impl Real for f64 {
    const WIDTH: usize = 8;
    const TAG: u8 = 8;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// A number type closed under `+ - * /` that can be built from event counts.
///
/// Implemented for the float types and for exact rationals.
pub trait Field: Num + Clone + PartialOrd + Debug {
    fn from_count(n: u64) -> Self;
}

impl Field for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
}

impl Field for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
}

impl Field for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i64::try_from(n).expect("count exceeds i64"))
    }
}

impl Field for Ratio<i128> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i128::from(n))
    }
}

impl Field for BigRational {
    fn from_count(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
}

/// Sums `term(a[i], b[i])` over eight independent lanes of bounds-check-free
/// chunks, then reduces the lanes pairwise and adds the tail.
#[inline(always)]
fn lanes<F: Real>(a: &[F], b: &[F], term: impl Fn(F, F) -> F) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + term(x[l], y[l]);
        }
    }
    let mut sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        sum = sum + term(*x, *y);
    }
    sum
}

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    F::dot(a, b)
}

pub(crate) fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_kernels_match_portable_bit_for_bit() {
        for n in 0..140 {
            let a: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37).sin() * 3.1).collect();
            let b: Vec<f32> = (0..n).map(|i| (i as f32 * 1.3).cos() / 0.7).collect();
            assert_eq!(f32::dot(&a, &b).to_bits(), lanes(&a, &b, |x, y| x * y).to_bits());
            assert_eq!(
                f32::squared_l2(&a, &b).to_bits(),
                lanes(&a, &b, |x, y| (x - y) * (x - y)).to_bits()
            );
        }
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..13).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        1.5f32.write_le(&mut buf);
        (-2.25f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.5);
        assert_eq!(f64::read_le(&buf[4..]), -2.25);
    }
}
