//! Pairwise summation with a fixed reduction tree.
//!
//! The split points depend only on the slice length, so the serial and the
//! rayon-parallel versions produce bit-identical results.

use rayon::join;

use crate::Scalar;

const BLOCK: usize = 64;
const PAR_THRESHOLD: usize = 1 << 14;

pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    if xs.len() <= BLOCK {
        return xs.iter().fold(T::zero(), |acc, &x| acc + x);
    }
    let mid = split(xs.len());
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn par_pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    if xs.len() <= PAR_THRESHOLD {
        return pairwise_sum(xs);
    }
    let mid = split(xs.len());
    let (a, b) = join(
        || par_pairwise_sum(&xs[..mid]),
        || par_pairwise_sum(&xs[mid..]),
    );
    a + b
}

/// Mean and standard error (sample sd / sqrt(n)); the error is infinite for n = 1.
pub fn mean_stderr<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    assert!(n > 0, "mean of empty slice");
    let nf = T::from_count(n);
    let mean = par_pairwise_sum(xs) / nf;
    if n == 1 {
        return (mean, T::infinity());
    }
    let dev: Vec<T> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = par_pairwise_sum(&dev) / T::from_count(n - 1);
    (mean, (var / nf).sqrt())
}

// Largest multiple of BLOCK below the midpoint, so leaves stay full.
fn split(len: usize) -> usize {
    let half = len / 2;
    let m = (half / BLOCK) * BLOCK;
    if m == 0 {
        half
    } else {
        m
    }
}
