//! Token grouping in feature space.
//!
//! [`balanced_hierarchical_cluster`] recursively halves a token set with
//! balanced binary clustering until `2^K` equal clusters remain, optionally
//! letting the two siblings of each last-level split share `2n` tokens.
//! [`kmeans_sort_divide`] and [`lsh_sort_divide`] are the baseline groupers
//! it is compared against.

mod balanced;
mod baseline;

pub use balanced::{
    balanced_binary_cluster, balanced_binary_cluster_trace, balanced_hierarchical_cluster,
    balanced_hierarchical_cluster_with_key, overlap_split, BinarySplit, ClusterAssignment, SplitIteration, SplitRecord,
};
pub use baseline::{
    kmeans_sort_divide, lsh_bucketize, lsh_bucketize_with_projections, lsh_projections, lsh_sort_divide,
    sort_and_divide, KMeansGrouping,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Element;

/// Magnitude below which the ratio denominator is pushed away from zero.
pub const RATIO_DENOM_EPS: f64 = 1e-8;

/// How a token's two centroid similarities combine into its ranking key.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMode {
    /// `s1 / s2`, with `s2` clamped away from zero keeping its sign.
    #[default]
    Ratio,
    /// `s1 - s2`.
    Difference,
}

impl RankingMode {
    pub fn key<T: Element>(self, s1: T, s2: T) -> T {
        match self {
            RankingMode::Ratio => {
                let eps = T::from_f64(RATIO_DENOM_EPS);
                let denom = if s2.abs() >= eps {
                    s2
                } else if s2 < T::zero() {
                    -eps
                } else {
                    eps
                };
                s1 / denom
            }
            RankingMode::Difference => s1 - s2,
        }
    }
}

impl std::str::FromStr for RankingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(RankingMode::Ratio),
            "difference" => Ok(RankingMode::Difference),
            other => Err(Error::InvalidArgument(format!("unknown ranking mode {other:?}"))),
        }
    }
}

/// Parameters of balanced hierarchical clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingConfig {
    /// Number of binary levels `K`; yields `2^K` clusters.
    pub levels: u32,
    /// Iterations `T` per binary split.
    pub iters: usize,
    /// Overlap half-width `n`, applied at the last level only.
    #[serde(default)]
    pub overlap: usize,
    #[serde(default)]
    pub ranking_mode: RankingMode,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig { levels: 0, iters: 5, overlap: 0, ranking_mode: RankingMode::Ratio }
    }
}

impl GroupingConfig {
    pub fn new(levels: u32, iters: usize, overlap: usize) -> Self {
        GroupingConfig { levels, iters, overlap, ..Default::default() }
    }

    pub fn num_clusters(&self) -> usize {
        1 << self.levels
    }

    /// Checks the config against a token count.
    pub fn validate(&self, num_tokens: usize) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.levels >= usize::BITS - 1 || num_tokens == 0 || !num_tokens.is_multiple_of(self.num_clusters()) {
            return Err(Error::Divisibility { tokens: num_tokens, levels: self.levels });
        }
        let half = num_tokens / self.num_clusters();
        if self.levels > 0 && self.overlap >= half {
            return Err(Error::OverlapTooLarge { overlap: self.overlap, half });
        }
        Ok(())
    }

    /// Size of each final cluster: `N / 2^K`, plus `n` when the last level overlaps.
    pub fn cluster_size(&self, num_tokens: usize) -> usize {
        let base = num_tokens / self.num_clusters();
        if self.levels > 0 {
            base + self.overlap
        } else {
            base
        }
    }
}
