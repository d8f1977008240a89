//! Sample configurations and colexicographic lattice indexing.
//!
//! A configuration of size `m` in `d` types is a composition of `m` into `d`
//! non-negative parts. Within a size level compositions are ordered
//! colexicographically (last coordinate most significant), so for `d = 2` the
//! level `m = 2` reads `(2,0), (1,1), (0,2)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("sample size must be at least 1")]
    ZeroSize,
    #[error("sample configuration has no lineages")]
    EmptySample,
    #[error("configuration has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lattice level too large to index")]
    Overflow,
}

/// Lineage counts per allelic type; at least one count is positive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleConfig(Vec<u32>);

impl SampleConfig {
    pub fn new(counts: Vec<u32>) -> Result<Self, LatticeError> {
        if counts.is_empty() {
            return Err(LatticeError::ZeroDimension);
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(LatticeError::EmptySample);
        }
        Ok(Self(counts))
    }

    /// Unit vector `e_i` in `d` dimensions.
    pub fn unit(d: usize, i: usize) -> Self {
        let mut counts = vec![0; d];
        counts[i] = 1;
        Self(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn into_counts(self) -> Vec<u32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `‖n‖ = Σ n_i`.
    pub fn size(&self) -> u64 {
        size_of(&self.0)
    }

    pub fn plus_unit(&self, i: usize) -> Self {
        let mut counts = self.0.clone();
        counts[i] += 1;
        Self(counts)
    }

    /// `n − e_i`, or `None` when `n_i = 0` or the result is the empty sample.
    pub fn minus_unit(&self, i: usize) -> Option<Self> {
        if self.0[i] == 0 {
            return None;
        }
        let mut counts = self.0.clone();
        counts[i] -= 1;
        Self::new(counts).ok()
    }
}

impl fmt::Display for SampleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl AsRef<[u32]> for SampleConfig {
    fn as_ref(&self) -> &[u32] {
        &self.0
    }
}

pub fn size_of(counts: &[u32]) -> u64 {
    counts.iter().map(|&c| u64::from(c)).sum()
}

/// Binomial coefficient, `None` on overflow of `usize`.
pub fn binomial(n: u64, k: u64) -> Option<usize> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        acc = acc * u128::from(n - t) / u128::from(t + 1);
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Number of compositions of `m` into `d` non-negative parts.
pub fn level_count(d: usize, m: u64) -> Option<usize> {
    if d == 0 {
        return Some(usize::from(m == 0));
    }
    binomial(m + d as u64 - 1, d as u64 - 1)
}

fn compositions(d: usize, m: u32, prefix_out: &mut Vec<Vec<u32>>) {
    if d == 1 {
        prefix_out.push(vec![m]);
        return;
    }
    for last in 0..=m {
        let mut inner = Vec::new();
        compositions(d - 1, m - last, &mut inner);
        for mut c in inner {
            c.push(last);
            prefix_out.push(c);
        }
    }
}

/// All compositions of `m` into `d` parts in colexicographic order.
pub fn enumerate_configs(d: usize, m: u32) -> Result<Vec<SampleConfig>, LatticeError> {
    if d == 0 {
        return Err(LatticeError::ZeroDimension);
    }
    if m == 0 {
        return Err(LatticeError::ZeroSize);
    }
    let mut out = Vec::with_capacity(level_count(d, m.into()).ok_or(LatticeError::Overflow)?);
    compositions(d, m, &mut out);
    Ok(out.into_iter().map(SampleConfig).collect())
}

/// Position of `counts` within its size level in colexicographic order.
pub fn colex_rank(counts: &[u32]) -> usize {
    let mut remaining = size_of(counts);
    let mut rank = 0usize;
    for pos in (1..counts.len()).rev() {
        let last = u64::from(counts[pos]);
        // compositions of `remaining - k` into `pos` parts for k < last
        let p = pos as u64;
        let all = binomial(remaining + p, p).expect("rank overflow");
        let tail = binomial(remaining - last + p, p).expect("rank overflow");
        rank += all - tail;
        remaining -= last;
    }
    rank
}

/// Dense index over all configurations with `1 ≤ ‖n‖ ≤ max_size`, ordered
/// by size and colexicographically within each size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeIndex {
    d: usize,
    max_size: u32,
    offsets: Vec<usize>,
}

impl LatticeIndex {
    pub fn new(d: usize, max_size: u32) -> Result<Self, LatticeError> {
        if d == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if max_size == 0 {
            return Err(LatticeError::ZeroSize);
        }
        // offsets[m] = first index of level m; offsets[max_size + 1] = total
        let mut offsets = vec![0usize; max_size as usize + 2];
        for m in 1..=max_size as usize {
            let count = level_count(d, m as u64).ok_or(LatticeError::Overflow)?;
            offsets[m + 1] = offsets[m].checked_add(count).ok_or(LatticeError::Overflow)?;
        }
        Ok(Self { d, max_size, offsets })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn max_size(&self) -> u32 {
        self.max_size
    }

    pub fn len(&self) -> usize {
        self.offsets[self.max_size as usize + 1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn level_len(&self, m: u32) -> usize {
        let m = m as usize;
        self.offsets[m + 1] - self.offsets[m]
    }

    pub fn level_offset(&self, m: u32) -> usize {
        self.offsets[m as usize]
    }

    /// Global index, `None` when outside `1 ≤ ‖n‖ ≤ max_size` or wrong dimension.
    pub fn index_of(&self, counts: &[u32]) -> Option<usize> {
        if counts.len() != self.d {
            return None;
        }
        let m = size_of(counts);
        if m == 0 || m > u64::from(self.max_size) {
            return None;
        }
        Some(self.offsets[m as usize] + colex_rank(counts))
    }

    /// Configurations of level `m` in index order.
    pub fn level(&self, m: u32) -> Vec<SampleConfig> {
        enumerate_configs(self.d, m).expect("valid level")
    }
}
