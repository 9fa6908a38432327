//! Brute-force references for verification.
//!
//! Everything here is f64, single-threaded and written as literal loops.
//! Nothing calls into the production kernels of [`crate::numeric::ops`],
//! [`crate::attention`] or [`crate::grouping`]; only the plain data types
//! are shared, so agreement between the two is meaningful.

use std::collections::BTreeMap;
use std::fmt;

use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::grouping::{ClusterAssignment, GroupingConfig, RankingMode};
use crate::numeric::{Element, Tensor};

fn dims(t: &Tensor<f64>) -> Result<(usize, usize)> {
    t.dims2()
}

/// Literal `softmax(q kᵀ / √d) v` with an optional per-pair mask and bias.
#[allow(clippy::needless_range_loop)]
fn masked_attention(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    allowed: &dyn Fn(usize, usize) -> bool,
    bias: &dyn Fn(usize, usize) -> f64,
) -> Result<Tensor<f64>> {
    let (mq, d) = dims(q)?;
    let (mk, dk) = dims(k)?;
    let (mv, dv) = dims(v)?;
    if d != dk || mk != mv {
        return Err(Error::shape(
            "oracle attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; mq * dv];
    for i in 0..mq {
        let mut scores = vec![f64::NEG_INFINITY; mk];
        for j in 0..mk {
            if !allowed(i, j) {
                continue;
            }
            let mut s = 0.0;
            for t in 0..d {
                s += q.data()[i * d + t] * k.data()[j * d + t];
            }
            scores[j] = s * scale + bias(i, j);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let weights: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for j in 0..mk {
            let p = weights[j] / total;
            for t in 0..dv {
                out[i * dv + t] += p * v.data()[j * dv + t];
            }
        }
    }
    Tensor::new(vec![mq, dv], out)
}

/// Triple-loop `softmax(q kᵀ / √d) v`.
pub fn naive_global_attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Result<Tensor<f64>> {
    masked_attention(q, k, v, &|_, _| true, &|_, _| 0.0)
}

fn naive_linear(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, cin) = dims(x)?;
    let (wi, cout) = dims(w)?;
    if wi != cin || b.len() != cout {
        return Err(Error::shape("oracle linear", format!("{:?} x {:?}", x.shape(), w.shape())));
    }
    let mut out = vec![0.0; n * cout];
    for i in 0..n {
        for o in 0..cout {
            let mut s = b.data()[o];
            for c in 0..cin {
                s += x.data()[i * cin + c] * w.data()[c * cout + o];
            }
            out[i * cout + o] = s;
        }
    }
    Tensor::new(vec![n, cout], out)
}

fn head_slice(x: &Tensor<f64>, head: usize, d: usize, rows: &[usize]) -> Tensor<f64> {
    let c = x.last_dim();
    Tensor::from_fn(&[rows.len(), d], |i| x.data()[rows[i / d] * c + head * d + i % d])
}

/// Depthwise 3×3, padding 1, over tokens laid out row-major on an `h × w` grid.
fn naive_lepe(v: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>, (h, w): (usize, usize)) -> Tensor<f64> {
    let c = v.last_dim();
    Tensor::from_fn(&[h * w, c], |i| {
        let (tok, ch) = (i / c, i % c);
        let (y, x) = ((tok / w) as isize, (tok % w) as isize);
        let mut s = bias.data()[ch];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let (yy, xx) = (y + ky - 1, x + kx - 1);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    s += weight.data()[ch * 9 + (ky * 3 + kx) as usize]
                        * v.data()[(yy as usize * w + xx as usize) * c + ch];
                }
            }
        }
        s
    })
}

/// Multi-head attention where head `h` attends within each token list of
/// `clusters[h]`; tokens listed twice average their outputs. LePE is added
/// when the params carry it, then the output projection is applied.
pub fn clustered_attention_oracle(
    x: &Tensor<f64>,
    params: &AttentionParams<f64>,
    clusters: &[Vec<Vec<usize>>],
    spatial: (usize, usize),
) -> Result<Tensor<f64>> {
    let (n, c) = dims(x)?;
    let heads = params.num_heads;
    if clusters.len() != heads || n != spatial.0 * spatial.1 {
        return Err(Error::shape("clustered_attention_oracle", "one cluster list per head, N = H·W"));
    }
    let d = c / heads;
    let q = naive_linear(x, &params.w_q, &params.b_q)?;
    let k = naive_linear(x, &params.w_k, &params.b_k)?;
    let v = naive_linear(x, &params.w_v, &params.b_v)?;
    let mut attn = vec![0.0; n * c];
    for (head, head_clusters) in clusters.iter().enumerate() {
        let mut count = vec![0usize; n];
        let mut sum = vec![0.0; n * d];
        for members in head_clusters {
            let out = naive_global_attention(
                &head_slice(&q, head, d, members),
                &head_slice(&k, head, d, members),
                &head_slice(&v, head, d, members),
            )?;
            for (r, &tok) in members.iter().enumerate() {
                count[tok] += 1;
                for t in 0..d {
                    sum[tok * d + t] += out.data()[r * d + t];
                }
            }
        }
        for tok in 0..n {
            for t in 0..d {
                attn[tok * c + head * d + t] = sum[tok * d + t] / count[tok].max(1) as f64;
            }
        }
    }
    let mut attn = Tensor::new(vec![n, c], attn)?;
    if let Some(l) = &params.lepe {
        let pos = naive_lepe(&v, &l.weight, &l.bias, spatial);
        attn = Tensor::from_fn(&[n, c], |i| attn.data()[i] + pos.data()[i]);
    }
    naive_linear(&attn, &params.w_o, &params.b_o)
}

/// Global multi-head attention (+ LePE when present) with the output projection.
pub fn global_multihead_attention(
    x: &Tensor<f64>,
    params: &AttentionParams<f64>,
    spatial: (usize, usize),
) -> Result<Tensor<f64>> {
    let n = x.shape()[0];
    let all = vec![vec![(0..n).collect::<Vec<_>>()]; params.num_heads];
    clustered_attention_oracle(x, params, &all, spatial)
}

/// Global multi-head attention in which token `i` may only attend to
/// tokens `j` with `window_of[i] == window_of[j]`, plus the relative
/// position bias looked up from in-window coordinates. The output
/// projection is applied; LePE is not.
pub fn masked_window_attention_oracle(
    x: &Tensor<f64>,
    params: &AttentionParams<f64>,
    window_of: &[usize],
    coords: &[(usize, usize)],
    window_size: usize,
) -> Result<Tensor<f64>> {
    let (n, c) = dims(x)?;
    if window_of.len() != n || coords.len() != n {
        return Err(Error::shape("masked_window_attention_oracle", "window map must cover every token"));
    }
    let heads = params.num_heads;
    let d = c / heads;
    let span = 2 * window_size - 1;
    let q = naive_linear(x, &params.w_q, &params.b_q)?;
    let k = naive_linear(x, &params.w_k, &params.b_k)?;
    let v = naive_linear(x, &params.w_v, &params.b_v)?;
    let all: Vec<usize> = (0..n).collect();
    let mut attn = vec![0.0; n * c];
    for head in 0..heads {
        let bias = |i: usize, j: usize| -> f64 {
            let Some(table) = &params.rel_pos_bias else { return 0.0 };
            let (yi, xi) = coords[i];
            let (yj, xj) = coords[j];
            let row = (yi + window_size - 1 - yj) * span + (xi + window_size - 1 - xj);
            table.data()[row * heads + head]
        };
        let out = masked_attention(
            &head_slice(&q, head, d, &all),
            &head_slice(&k, head, d, &all),
            &head_slice(&v, head, d, &all),
            &|i, j| window_of[i] == window_of[j],
            &bias,
        )?;
        for tok in 0..n {
            for t in 0..d {
                attn[tok * c + head * d + t] = out.data()[tok * d + t];
            }
        }
    }
    naive_linear(&Tensor::new(vec![n, c], attn)?, &params.w_o, &params.b_o)
}

/// Central differences `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h` for every coordinate.
pub fn finite_difference_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>> {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_difference_grad evaluation"));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// `max |a - b| / max |b|`: error relative to the reference's largest entry.
pub fn max_relative_error(actual: &Tensor<f64>, reference: &Tensor<f64>) -> f64 {
    let scale = reference.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    actual.data().iter().zip(reference.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// A broken invariant found by [`brute_force_assignment_check`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ClusterCount { expected: usize, found: usize },
    ClusterSize { cluster: usize, expected: usize, found: usize },
    LevelBalance { level: usize, detail: String },
    Partition { detail: String },
    SplitMembership { level: u32, parent: usize, detail: String },
    Ranking { level: u32, parent: usize, detail: String },
    OverlapCardinality { pair: usize, expected: usize, found: usize },
}

impl Violation {
    /// Short name of the invariant.
    pub fn invariant(&self) -> &'static str {
        match self {
            Violation::ClusterCount { .. } => "cluster count",
            Violation::ClusterSize { .. } => "cluster size",
            Violation::LevelBalance { .. } => "level balance",
            Violation::Partition { .. } => "partition",
            Violation::SplitMembership { .. } => "split membership",
            Violation::Ranking { .. } => "ranking property",
            Violation::OverlapCardinality { .. } => "overlap cardinality",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.invariant())?;
        match self {
            Violation::ClusterCount { expected, found } => write!(f, "expected {expected} clusters, found {found}"),
            Violation::ClusterSize { cluster, expected, found } => {
                write!(f, "cluster {cluster} has {found} tokens, expected {expected}")
            }
            Violation::OverlapCardinality { pair, expected, found } => {
                write!(f, "sibling pair {pair} shares {found} tokens, expected {expected}")
            }
            Violation::LevelBalance { level, detail } => write!(f, "level {level}: {detail}"),
            Violation::Partition { detail } => write!(f, "{detail}"),
            Violation::SplitMembership { level, parent, detail } | Violation::Ranking { level, parent, detail } => {
                write!(f, "level {level}, parent {parent}: {detail}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssignmentReport {
    pub violations: Vec<Violation>,
}

impl AssignmentReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for AssignmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "pass");
        }
        write!(f, "fail ({} violations)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

fn oracle_cosine(x: &[f64], y: &[f64]) -> f64 {
    let mut xy = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for i in 0..x.len() {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    xy / (xx.sqrt().max(1e-12) * yy.sqrt().max(1e-12))
}

fn oracle_key(mode: RankingMode, s1: f64, s2: f64) -> f64 {
    match mode {
        RankingMode::Ratio => {
            let denom = if s2.abs() >= 1e-8 {
                s2
            } else if s2 < 0.0 {
                -1e-8
            } else {
                1e-8
            };
            s1 / denom
        }
        RankingMode::Difference => s1 - s2,
    }
}

/// Ranking check for one split given recomputed keys.
///
/// `first` and `second` are member positions. Keys closer than `tol`
/// (relative) are treated as ties of unknown order since the keys were
/// produced in a lower precision; exactly equal keys must keep position order.
fn ranking_violation(keys: &[f64], first: &[usize], second: &[usize], tol: f64) -> Option<String> {
    let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
    let (min_pos, min1) =
        first
            .iter()
            .map(|&p| (p, keys[p]))
            .fold((usize::MAX, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    for &p in second {
        if keys[p] > min1 && !close(keys[p], min1) {
            return Some(format!(
                "position {p} in the second cluster has key {} above position {min_pos} in the first ({min1})",
                keys[p]
            ));
        }
    }
    // Exact ties: every first-cluster position must precede every second-cluster one.
    let mut latest_first: BTreeMap<u64, usize> = BTreeMap::new();
    for &p in first {
        let e = latest_first.entry(keys[p].to_bits()).or_insert(p);
        *e = (*e).max(p);
    }
    for &p in second {
        if let Some(&f) = latest_first.get(&keys[p].to_bits()) {
            if f > p {
                return Some(format!("tie at key {} broken against index order ({f} after {p})", keys[p]));
            }
        }
    }
    None
}

/// Re-derives every structural and ranking invariant of `assignment` from
/// the tokens, the reported per-split centroids and `cfg`.
pub fn brute_force_assignment_check<T: Element>(
    tokens: &Tensor<T>,
    assignment: &ClusterAssignment<T>,
    cfg: &GroupingConfig,
) -> AssignmentReport {
    let mut violations = Vec::new();
    let n = tokens.shape()[0];
    let c = tokens.last_dim();
    let k = cfg.levels as usize;
    let clusters = 1usize << k;
    let base = n / clusters;
    let overlap = if k > 0 { cfg.overlap } else { 0 };
    let tol = if T::DTYPE == crate::numeric::DType::F32 { 1e-4 } else { 1e-10 };

    if assignment.clusters.len() != clusters {
        violations.push(Violation::ClusterCount { expected: clusters, found: assignment.clusters.len() });
    }
    for (j, cl) in assignment.clusters.iter().enumerate() {
        if cl.len() != base + overlap {
            violations.push(Violation::ClusterSize { cluster: j, expected: base + overlap, found: cl.len() });
        }
    }

    // Level maps: right count, balanced subsets, children nested in parents.
    if assignment.levels.len() != k + 1 {
        violations.push(Violation::LevelBalance {
            level: assignment.levels.len(),
            detail: format!("expected {} level maps", k + 1),
        });
        return AssignmentReport { violations };
    }
    for (level, map) in assignment.levels.iter().enumerate() {
        let mut counts = vec![0usize; 1 << level];
        for (tok, &sub) in map.iter().enumerate() {
            match counts.get_mut(sub) {
                Some(ct) => *ct += 1,
                None => violations.push(Violation::LevelBalance {
                    level,
                    detail: format!("token {tok} in subset {sub} out of range"),
                }),
            }
            if level > 0 && sub / 2 != assignment.levels[level - 1][tok] {
                violations.push(Violation::LevelBalance {
                    level,
                    detail: format!("token {tok} not nested in its parent subset"),
                });
            }
        }
        if let Some((sub, &ct)) = counts.iter().enumerate().find(|(_, &ct)| ct != n >> level) {
            violations.push(Violation::LevelBalance {
                level,
                detail: format!("subset {sub} has {ct} tokens, expected {}", n >> level),
            });
        }
    }

    // Final clusters: partition (n = 0) or sibling-overlap structure.
    let mut times = vec![0usize; n];
    for cl in &assignment.clusters {
        for &t in cl {
            if t >= n {
                violations.push(Violation::Partition { detail: format!("token index {t} out of range") });
                return AssignmentReport { violations };
            }
            times[t] += 1;
        }
    }
    if let Some(t) = times.iter().position(|&x| x == 0) {
        violations.push(Violation::Partition { detail: format!("token {t} is in no cluster") });
    }
    let max_times = if overlap > 0 { 2 } else { 1 };
    if let Some(t) = times.iter().position(|&x| x > max_times) {
        violations.push(Violation::Partition { detail: format!("token {t} is in {} clusters", times[t]) });
    }
    if k > 0 {
        for pair in 0..assignment.clusters.len() / 2 {
            let a = &assignment.clusters[2 * pair];
            let b = &assignment.clusters[2 * pair + 1];
            let shared = a.iter().filter(|t| b.contains(t)).count();
            if shared != 2 * overlap {
                violations.push(Violation::OverlapCardinality { pair, expected: 2 * overlap, found: shared });
            }
        }
    }

    // Splits: membership agrees with the level maps, ranking holds for the
    // keys recomputed from the reported centroids.
    let expected_splits = clusters - 1;
    if assignment.splits.len() != expected_splits {
        violations.push(Violation::Partition {
            detail: format!("expected {expected_splits} split records, found {}", assignment.splits.len()),
        });
    }
    for split in &assignment.splits {
        let (level, parent) = (split.level, split.parent);
        let members = &split.members;
        let len = members.len();
        let m = len / 2;
        let order = &split.last.order;
        if order.len() != len || members.iter().any(|&t| t >= n) {
            violations.push(Violation::SplitMembership { level, parent, detail: "malformed split record".into() });
            continue;
        }
        let lv = level as usize;
        let bad_member = members.iter().find(|&&t| assignment.levels[lv - 1][t] != parent);
        let bad_child = order.iter().enumerate().find(|&(rank, &p)| {
            let want = 2 * parent + usize::from(rank >= m);
            assignment.levels[lv][members[p]] != want
        });
        if bad_member.is_some() || bad_child.is_some() {
            violations.push(Violation::SplitMembership {
                level,
                parent,
                detail: "sorted halves disagree with level maps".into(),
            });
        }
        if lv == k {
            let (a, b) = (&assignment.clusters[2 * parent], &assignment.clusters[2 * parent + 1]);
            let want_a: Vec<usize> = order[..m + overlap].iter().map(|&p| members[p]).collect();
            let want_b: Vec<usize> = order[m - overlap.min(m)..].iter().map(|&p| members[p]).collect();
            if *a != want_a || *b != want_b {
                violations.push(Violation::SplitMembership {
                    level,
                    parent,
                    detail: "final clusters are not the leading/trailing m+n of the sorted list".into(),
                });
            }
        }
        let c1: Vec<f64> = split.last.centroids[0].iter().map(|v| v.as_f64()).collect();
        let c2: Vec<f64> = split.last.centroids[1].iter().map(|v| v.as_f64()).collect();
        if c1.len() != c || c2.len() != c {
            violations.push(Violation::SplitMembership {
                level,
                parent,
                detail: "centroid width differs from token width".into(),
            });
            continue;
        }
        let keys: Vec<f64> = members
            .iter()
            .map(|&t| {
                let row: Vec<f64> = tokens.row(t).iter().map(|v| v.as_f64()).collect();
                oracle_key(cfg.ranking_mode, oracle_cosine(&row, &c1), oracle_cosine(&row, &c2))
            })
            .collect();
        if let Some(detail) = ranking_violation(&keys, &order[..m], &order[m..], tol) {
            violations.push(Violation::Ranking { level, parent, detail });
        }
    }
    AssignmentReport { violations }
}

/// Ranking check for one binary split, for iteration traces of
/// [`crate::grouping::balanced_binary_cluster_trace`].
pub fn check_split_ranking<T: Element>(
    tokens: &Tensor<T>,
    centroids: &[Vec<T>; 2],
    order: &[usize],
    mode: RankingMode,
) -> Option<String> {
    let c1: Vec<f64> = centroids[0].iter().map(|v| v.as_f64()).collect();
    let c2: Vec<f64> = centroids[1].iter().map(|v| v.as_f64()).collect();
    let keys: Vec<f64> = tokens
        .rows()
        .map(|r| {
            let row: Vec<f64> = r.iter().map(|v| v.as_f64()).collect();
            oracle_key(mode, oracle_cosine(&row, &c1), oracle_cosine(&row, &c2))
        })
        .collect();
    let tol = if T::DTYPE == crate::numeric::DType::F32 { 1e-4 } else { 1e-10 };
    let m = order.len() / 2;
    ranking_violation(&keys, &order[..m], &order[m..], tol)
}
