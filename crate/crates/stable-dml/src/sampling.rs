//! Subsampling and fold construction.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::seed::Stream;

/// Draw from `[0, span)` using a single 64-bit word.
///
/// Plain modulo keeps the draw count deterministic (one word per call); the
/// bias is of order `span / 2^64`, negligible at the sample sizes this crate
/// handles.
#[inline]
fn draw_below(rng: &mut Stream, span: usize) -> usize {
    debug_assert!(span > 0);
    (rng.next_u64() % span as u64) as usize
}

/// Sample `m` distinct indices from `[0, n)` uniformly without replacement.
///
/// Partial Fisher-Yates over the index range: every size-`m` subset is
/// equally likely and exactly `m` words are consumed from the stream.
pub fn subsample_without_replacement(n: usize, m: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "subsample size m={m} must satisfy 1 <= m <= n={n}"
        )));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = i + draw_below(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(m);
    Ok(pool)
}

/// A balanced random partition of `[0, n)` into `k` folds.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Fold id per observation, in observation order.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Observations inside fold `fold`, ascending.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Observations outside fold `fold`, ascending.
    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Randomly partition `[0, n)` into `k` folds whose sizes differ by at most 1.
pub fn make_folds(n: usize, k: usize, rng: &mut Stream) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!(
            "fold count k={k} must satisfy 2 <= k <= n={n}"
        )));
    }
    // Full shuffle, then round-robin fold ids over the shuffled order.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..(n - 1) {
        let j = i + draw_below(rng, n - i);
        order.swap(i, j);
    }
    let mut assignment = vec![0usize; n];
    for (pos, &obs) in order.iter().enumerate() {
        assignment[obs] = pos % k;
    }
    Ok(FoldAssignment { k, assignment })
}
