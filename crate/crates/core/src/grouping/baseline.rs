use crate::error::{Error, Result};
use crate::numeric::ops::dot;
use crate::numeric::{Element, Rng, Tensor};

/// Sorts token indices by `(label, index)` and cuts the result into
/// consecutive groups of `group_size`.
pub fn sort_and_divide<L: Ord + Copy>(labels: &[L], group_size: usize) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if group_size == 0 || n == 0 || !n.is_multiple_of(group_size) {
        return Err(Error::GroupSize { tokens: n, group_size });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| (labels[i], i));
    Ok(idx.chunks(group_size).map(<[usize]>::to_vec).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansGrouping {
    /// Cluster index per token after the final assignment step.
    pub labels: Vec<usize>,
    /// Equal-size groups obtained by sorting on `(label, index)`.
    pub groups: Vec<Vec<usize>>,
}

fn sq_dist<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += (x - y) * (x - y);
    }
    acc
}

fn assign<T: Element>(tokens: &Tensor<T>, centroids: &[Vec<T>]) -> Vec<usize> {
    tokens
        .rows()
        .map(|t| {
            let mut best = 0;
            let mut best_d = sq_dist(t, &centroids[0]);
            for (j, c) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(t, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Euclidean K-means followed by sort-and-divide into equal groups.
///
/// Initial centroids are `num_clusters` distinct tokens drawn with the
/// seeded generator. A cluster left empty by an update is reseeded at the
/// token farthest from its own centroid.
pub fn kmeans_sort_divide<T: Element>(
    tokens: &Tensor<T>,
    num_clusters: usize,
    group_size: usize,
    iters: usize,
    seed: u64,
) -> Result<KMeansGrouping> {
    let (n, c) = tokens.dims2()?;
    if group_size == 0 || n % group_size != 0 {
        return Err(Error::GroupSize { tokens: n, group_size });
    }
    if num_clusters == 0 || num_clusters > n {
        return Err(Error::InvalidArgument(format!("num_clusters must be in [1, {n}], got {num_clusters}")));
    }
    tokens.check_finite("kmeans_sort_divide input")?;

    let mut rng = Rng::derive(seed, "kmeans-init");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..num_clusters {
        let j = i + rng.below(n - i);
        pool.swap(i, j);
    }
    let mut centroids: Vec<Vec<T>> = pool[..num_clusters].iter().map(|&i| tokens.row(i).to_vec()).collect();

    for _ in 0..iters {
        let labels = assign(tokens, &centroids);
        let mut sums = vec![vec![T::zero(); c]; num_clusters];
        let mut counts = vec![0usize; num_clusters];
        for (t, &l) in tokens.rows().zip(&labels) {
            for (s, &v) in sums[l].iter_mut().zip(t) {
                *s += v;
            }
            counts[l] += 1;
        }
        // Distances to the pre-update centroid, used to pick reseed points.
        let mut spread: Vec<(T, usize)> =
            tokens.rows().zip(&labels).enumerate().map(|(i, (t, &l))| (sq_dist(t, &centroids[l]), i)).collect();
        spread.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let mut reseeds = spread.into_iter().map(|(_, i)| i);
        for j in 0..num_clusters {
            if counts[j] == 0 {
                let far = reseeds.next().expect("more tokens than clusters");
                centroids[j] = tokens.row(far).to_vec();
            } else {
                let denom = T::from_usize(counts[j]);
                centroids[j] = sums[j].iter().map(|&s| s / denom).collect();
            }
        }
    }

    let labels = assign(tokens, &centroids);
    let groups = sort_and_divide(&labels, group_size)?;
    Ok(KMeansGrouping { labels, groups })
}

/// `num_bits` Gaussian projection directions drawn from the seeded
/// generator, independent of any token data.
pub fn lsh_projections(channels: usize, num_bits: usize, seed: u64) -> Result<Tensor<f64>> {
    if num_bits == 0 || num_bits > 64 {
        return Err(Error::InvalidArgument(format!("num_bits must be in [1, 64], got {num_bits}")));
    }
    if channels == 0 {
        return Err(Error::InvalidArgument("tokens need at least one channel".into()));
    }
    let mut rng = Rng::derive(seed, "lsh-projections");
    Ok(Tensor::from_fn(&[num_bits, channels], |_| rng.normal()))
}

/// Sign-random-projection bucket per token: bit `j` is set when the token
/// has a strictly positive dot product with projection `j`.
pub fn lsh_bucketize_with_projections<T: Element>(tokens: &Tensor<T>, projections: &Tensor<f64>) -> Result<Vec<u64>> {
    let (_, c) = tokens.dims2()?;
    let (bits, pc) = projections.dims2()?;
    if pc != c || bits > 64 {
        return Err(Error::shape("lsh_bucketize", format!("{bits} projections of width {pc} for {c}-channel tokens")));
    }
    Ok(tokens
        .rows()
        .map(|t| {
            let t: Vec<f64> = t.iter().map(|v| v.as_f64()).collect();
            projections.rows().enumerate().fold(0u64, |acc, (j, p)| if dot(&t, p) > 0.0 { acc | (1 << j) } else { acc })
        })
        .collect())
}

/// Bucket id per token from `num_bits` seeded sign random projections.
pub fn lsh_bucketize<T: Element>(tokens: &Tensor<T>, num_bits: usize, seed: u64) -> Result<Vec<u64>> {
    let (_, c) = tokens.dims2()?;
    lsh_bucketize_with_projections(tokens, &lsh_projections(c, num_bits, seed)?)
}

/// LSH buckets equalized into groups of `group_size` by sort-and-divide.
pub fn lsh_sort_divide<T: Element>(
    tokens: &Tensor<T>,
    num_bits: usize,
    group_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    sort_and_divide(&lsh_bucketize(tokens, num_bits, seed)?, group_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_tokens_give_consecutive_chunks() {
        let t = Tensor::<f64>::full(&[8, 3], 1.5);
        let g = kmeans_sort_divide(&t, 3, 4, 5, 0).unwrap();
        assert_eq!(g.groups, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
    }

    #[test]
    fn group_count_and_size() {
        let mut r = Rng::new(5);
        let t = Tensor::<f64>::from_fn(&[8, 2], |_| r.normal());
        let g = kmeans_sort_divide(&t, 2, 4, 5, 1).unwrap();
        assert_eq!(g.groups.len(), 2);
        assert!(g.groups.iter().all(|x| x.len() == 4));
        assert!(matches!(kmeans_sort_divide(&t, 2, 3, 5, 1), Err(Error::GroupSize { .. })));
    }

    #[test]
    fn two_blob_sort_divide_mixes_blobs() {
        // Blob A: tokens 0..4 near (10, 0); blob B: tokens 4..6 near (-10, 0).
        let t = Tensor::from_rows(&[
            vec![10.0, 0.1],
            vec![10.1, 0.0],
            vec![9.9, -0.1],
            vec![10.0, 0.2],
            vec![-10.0, 0.0],
            vec![-10.1, 0.1],
        ])
        .unwrap();
        for seed in 0..10 {
            let g = kmeans_sort_divide(&t, 2, 3, 10, seed).unwrap();
            assert_eq!(g.labels[..4].iter().collect::<std::collections::HashSet<_>>().len(), 1);
            assert_ne!(g.labels[0], g.labels[4]);
            assert_eq!(g.labels[4], g.labels[5]);
            let mixed = g.groups.iter().filter(|grp| grp.iter().any(|&i| i < 4) && grp.iter().any(|&i| i >= 4)).count();
            assert_eq!(mixed, 1, "seed {seed}: {:?}", g.groups);
            let a_groups = g.groups.iter().filter(|grp| grp.iter().any(|&i| i < 4)).count();
            assert_eq!(a_groups, 2);
        }
    }

    #[test]
    fn lsh_examples() {
        let same = Tensor::<f64>::full(&[3, 4], -0.3);
        let b = lsh_bucketize(&same, 6, 9).unwrap();
        assert!(b.iter().all(|&x| x == b[0]));

        let t = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = lsh_bucketize_with_projections(&t, &p).unwrap();
        assert_eq!(b, vec![1, 0]);

        let mut r = Rng::new(2);
        let t = Tensor::<f32>::from_fn(&[32, 5], |_| r.normal() as f32);
        assert_eq!(lsh_bucketize(&t, 4, 77).unwrap(), lsh_bucketize(&t, 4, 77).unwrap());
        assert!(lsh_bucketize(&t, 0, 77).is_err());
        let groups = lsh_sort_divide(&t, 4, 8, 77).unwrap();
        assert_eq!(groups.len(), 4);
    }
}
