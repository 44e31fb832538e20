//! Streaming mean/variance with a mergeable state.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Items handled by one work item in [`chunked_reduce`]. Fixed so the
/// reduction tree never depends on the number of workers.
pub const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let delta = other.mean - self.mean;
        RunningStats { count, mean: self.mean + delta * nb / n, m2: self.m2 + other.m2 + delta * delta * na * nb / n }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean, stderr: self.stderr(), shots: self.count }
    }
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub shots: u64,
}

impl Estimate {
    /// `|mean - target| <= k * stderr`
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Reduces `items` by merging neighbours level by level, so the result only
/// depends on the order of `items`.
pub fn pairwise_reduce<T: Clone>(items: &[T], merge: impl Fn(&T, &T) -> T) -> Option<T> {
    let mut level: Vec<T> = items.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => merge(a, b),
                [a] => a.clone(),
                _ => unreachable!(),
            })
            .collect();
    }
    level.pop()
}

/// Splits `0..total` into [`CHUNK`]-sized ranges, evaluates them in parallel
/// and merges the results with [`pairwise_reduce`].
pub fn chunked_reduce<A, F, M>(total: u64, per_chunk: F, merge: M) -> Result<Option<A>>
where
    A: Clone + Send,
    F: Fn(Range<u64>) -> Result<A> + Sync,
    M: Fn(&A, &A) -> A,
{
    let partial = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| per_chunk(c * CHUNK..((c + 1) * CHUNK).min(total)))
        .collect::<Result<Vec<A>>>()?;
    Ok(pairwise_reduce(&partial, merge))
}
