use rayon::prelude::*;

use super::{GroupingConfig, RankingMode};
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, stable_argsort_desc, Element, Tensor};

/// State of one iteration of balanced binary clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitIteration<T> {
    /// Centroids the keys were computed against.
    pub centroids: [Vec<T>; 2],
    /// Ranking key per input position.
    pub keys: Vec<T>,
    /// Input positions sorted by descending key, ties by position.
    pub order: Vec<usize>,
}

/// Result of splitting `2m` tokens into two halves of `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySplit<T> {
    /// Positions of the first `m` entries of `order`.
    pub first: Vec<usize>,
    /// Positions of the last `m` entries of `order`.
    pub second: Vec<usize>,
    /// Final sorted order of all input positions.
    pub order: Vec<usize>,
    /// Final iteration's centroids and keys.
    pub last: SplitIteration<T>,
}

/// One binary split performed inside hierarchical clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitRecord<T> {
    /// Level produced by this split (1-based).
    pub level: u32,
    /// Subset index, at `level - 1`, of the parent being split.
    pub parent: usize,
    /// Global token indices of the parent subset, ascending.
    pub members: Vec<usize>,
    /// Last iteration, with positions local to `members`.
    pub last: SplitIteration<T>,
}

/// Output of [`balanced_hierarchical_cluster`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment<T> {
    pub num_tokens: usize,
    /// `levels[k][token]` is the subset of `token` at level `k`, in `[0, 2^k)`.
    /// Level `K` is the non-overlapping partition.
    pub levels: Vec<Vec<usize>>,
    /// The `2^K` final clusters as global token indices. Sibling clusters
    /// `2j` and `2j + 1` share `2n` tokens when the last level overlaps.
    pub clusters: Vec<Vec<usize>>,
    /// Tokens shared by each sibling pair `(2j, 2j + 1)`; empty when `n = 0`.
    pub shared: Vec<Vec<usize>>,
    pub overlap: usize,
    /// Every binary split, ordered by level, then parent subset.
    pub splits: Vec<SplitRecord<T>>,
}

impl<T> ClusterAssignment<T> {
    pub fn num_levels(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }
}

fn mean_of<T: Element>(tokens: &Tensor<T>, members: &[usize], picks: impl Iterator<Item = usize>) -> Vec<T> {
    let c = tokens.last_dim();
    let mut acc = vec![T::zero(); c];
    let mut count = 0usize;
    for p in picks {
        for (a, &v) in acc.iter_mut().zip(tokens.row(members[p])) {
            *a += v;
        }
        count += 1;
    }
    let denom = T::from_usize(count);
    acc.iter_mut().for_each(|a| *a /= denom);
    acc
}

/// Balanced binary clustering over `members` (rows of `tokens`), in the
/// order given. Centroids start as the means of the first and second
/// halves of that order.
fn split_members<T, K>(
    tokens: &Tensor<T>,
    members: &[usize],
    iters: usize,
    key: &K,
    mut trace: Option<&mut Vec<SplitIteration<T>>>,
) -> Result<SplitIteration<T>>
where
    T: Element,
    K: Fn(T, T) -> T + ?Sized,
{
    let len = members.len();
    if len < 2 || !len.is_multiple_of(2) {
        return Err(Error::OddTokenCount(len));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("balanced binary clustering needs at least one iteration".into()));
    }
    let m = len / 2;
    let mut c1 = mean_of(tokens, members, 0..m);
    let mut c2 = mean_of(tokens, members, m..len);
    let mut last = None;
    for _ in 0..iters {
        let keys: Vec<T> = members
            .iter()
            .map(|&i| {
                let t = tokens.row(i);
                key(cosine_similarity(t, &c1), cosine_similarity(t, &c2))
            })
            .collect();
        let order = stable_argsort_desc(&keys)?;
        let next1 = mean_of(tokens, members, order[..m].iter().copied());
        let next2 = mean_of(tokens, members, order[m..].iter().copied());
        let it = SplitIteration {
            centroids: [std::mem::replace(&mut c1, next1), std::mem::replace(&mut c2, next2)],
            keys,
            order,
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(it.clone());
        }
        last = Some(it);
    }
    Ok(last.expect("at least one iteration"))
}

fn into_binary_split<T>(last: SplitIteration<T>) -> BinarySplit<T> {
    let m = last.order.len() / 2;
    BinarySplit { first: last.order[..m].to_vec(), second: last.order[m..].to_vec(), order: last.order.clone(), last }
}

/// Splits the `2m` rows of `tokens` into two clusters of `m` rows.
pub fn balanced_binary_cluster<T: Element>(
    tokens: &Tensor<T>,
    iters: usize,
    mode: RankingMode,
) -> Result<BinarySplit<T>> {
    let (n, _) = tokens.dims2()?;
    tokens.check_finite("balanced_binary_cluster input")?;
    let members: Vec<usize> = (0..n).collect();
    let last = split_members(tokens, &members, iters, &|a, b| mode.key(a, b), None)?;
    Ok(into_binary_split(last))
}

/// Like [`balanced_binary_cluster`], also returning every iteration's state.
pub fn balanced_binary_cluster_trace<T: Element>(
    tokens: &Tensor<T>,
    iters: usize,
    mode: RankingMode,
) -> Result<(BinarySplit<T>, Vec<SplitIteration<T>>)> {
    let (n, _) = tokens.dims2()?;
    tokens.check_finite("balanced_binary_cluster input")?;
    let members: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(iters);
    let last = split_members(tokens, &members, iters, &|a, b| mode.key(a, b), Some(&mut trace))?;
    Ok((into_binary_split(last), trace))
}

/// First `m + n` and last `m + n` entries of a sorted list of `2m` items.
///
/// The two halves share the middle `2n` entries.
pub fn overlap_split<I: Copy>(sorted: &[I], overlap: usize) -> Result<(Vec<I>, Vec<I>)> {
    let len = sorted.len();
    if len < 2 || !len.is_multiple_of(2) {
        return Err(Error::OddTokenCount(len));
    }
    let m = len / 2;
    if overlap >= m {
        return Err(Error::OverlapTooLarge { overlap, half: m });
    }
    Ok((sorted[..m + overlap].to_vec(), sorted[m - overlap..].to_vec()))
}

/// `K` levels of balanced binary clustering over the rows of `tokens`.
pub fn balanced_hierarchical_cluster<T: Element>(
    tokens: &Tensor<T>,
    cfg: &GroupingConfig,
) -> Result<ClusterAssignment<T>> {
    let mode = cfg.ranking_mode;
    balanced_hierarchical_cluster_with_key(tokens, cfg, &|a: T, b: T| mode.key(a, b))
}

/// [`balanced_hierarchical_cluster`] with a caller-supplied ranking key in
/// place of `cfg.ranking_mode`. Used by the self-test to inject faults.
#[doc(hidden)]
pub fn balanced_hierarchical_cluster_with_key<T: Element>(
    tokens: &Tensor<T>,
    cfg: &GroupingConfig,
    key: &(dyn Fn(T, T) -> T + Sync),
) -> Result<ClusterAssignment<T>> {
    let (n, _) = tokens.dims2()?;
    cfg.validate(n)?;
    tokens.check_finite("balanced_hierarchical_cluster input")?;

    let mut levels = vec![vec![0usize; n]];
    let mut subsets: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut splits = Vec::with_capacity(cfg.num_clusters().saturating_sub(1));
    let mut clusters = subsets.clone();
    let mut shared = Vec::new();

    for level in 1..=cfg.levels {
        // Sibling subsets are disjoint, so they split independently.
        let lasts = subsets
            .par_iter()
            .map(|members| split_members(tokens, members, cfg.iters, key, None))
            .collect::<Result<Vec<_>>>()?;

        let mut map = vec![0usize; n];
        let mut next = Vec::with_capacity(subsets.len() * 2);
        let final_level = level == cfg.levels;
        if final_level {
            clusters.clear();
        }
        for (parent, (members, last)) in subsets.into_iter().zip(lasts).enumerate() {
            let m = members.len() / 2;
            let global: Vec<usize> = last.order.iter().map(|&p| members[p]).collect();
            for (half, child) in [&global[..m], &global[m..]].into_iter().enumerate() {
                let mut child = child.to_vec();
                child.sort_unstable();
                for &t in &child {
                    map[t] = 2 * parent + half;
                }
                next.push(child);
            }
            if final_level {
                let (a, b) = overlap_split(&global, cfg.overlap)?;
                if cfg.overlap > 0 {
                    shared.push(global[m - cfg.overlap..m + cfg.overlap].to_vec());
                }
                clusters.push(a);
                clusters.push(b);
            }
            splits.push(SplitRecord { level, parent, members, last });
        }
        levels.push(map);
        subsets = next;
    }

    Ok(ClusterAssignment {
        num_tokens: n,
        levels,
        clusters,
        shared,
        overlap: if cfg.levels > 0 { cfg.overlap } else { 0 },
        splits,
    })
}
