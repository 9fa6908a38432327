//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use boat_core::attention::{attention_backward, fsla_forward, isla_swin_forward, AttentionParams, WindowConfig};
use boat_core::format::{self, DynTensor};
use boat_core::grouping::{
    balanced_binary_cluster_trace, balanced_hierarchical_cluster, kmeans_sort_divide, lsh_bucketize, lsh_projections,
    lsh_sort_divide, GroupingConfig, RankingMode,
};
use boat_core::model::{
    bla_block_forward, boat_forward, count_params, estimate_flops, global_attention_macs, BlockSettings, ModelConfig,
    ModelParams,
};
use boat_core::numeric::{Element, Rng, Tensor};
use boat_core::oracle;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn randn<T: Element>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.normal()))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn balance_and_partition() -> Outcome {
    let cfg = GroupingConfig::new(6, 5, 0);
    let start = Instant::now();
    let mut clustering = 0.0;
    for seed in 0..100u64 {
        let tokens: Tensor<f32> = randn(&[3136, 96], &mut Rng::new(seed));
        let t = Instant::now();
        let a = balanced_hierarchical_cluster(&tokens, &cfg).map_err(|e| e.to_string())?;
        clustering += t.elapsed().as_secs_f64();
        ensure(a.clusters.len() == 64 && a.clusters.iter().all(|c| c.len() == 49), || {
            format!("seed {seed}: sizes {:?}", a.cluster_sizes())
        })?;
        let mut seen = vec![false; 3136];
        for &t in a.clusters.iter().flatten() {
            ensure(!seen[t], || format!("seed {seed}: token {t} repeated"))?;
            seen[t] = true;
        }
        ensure(seen.iter().all(|&s| s), || format!("seed {seed}: not a partition"))?;
        let report = oracle::brute_force_assignment_check(&tokens, &a, &cfg);
        ensure(report.passed(), || format!("seed {seed}: {report}"))?;
    }
    ensure(clustering < 5.0, || format!("clustering took {clustering:.2}s"))?;
    Ok(format!(
        "100 sets, 64 x 49, oracle pass; clustering {clustering:.2}s, with checks {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn ranking_property() -> Outcome {
    let mut iterations = 0;
    for i in 0..1000u64 {
        let mut rng = Rng::derive(i, "acceptance-ranking");
        let m = 1 + rng.below(128);
        let c = 1 + rng.below(16);
        let iters = 1 + rng.below(6);
        let mode = if i % 4 == 3 { RankingMode::Difference } else { RankingMode::Ratio };
        // Every fifth instance is coarsely quantized so exact ties occur.
        let tokens: Tensor<f64> = if i % 5 == 0 {
            Tensor::from_fn(&[2 * m, c], |_| (rng.normal() * 2.0).round())
        } else {
            randn(&[2 * m, c], &mut rng)
        };
        let (_, trace) = balanced_binary_cluster_trace(&tokens, iters, mode).map_err(|e| e.to_string())?;
        for (it, step) in trace.iter().enumerate() {
            iterations += 1;
            if let Some(v) = oracle::check_split_ranking(&tokens, &step.centroids, &step.order, mode) {
                return Err(format!("instance {i} (2m={}), iteration {it}: {v}", 2 * m));
            }
        }
    }
    Ok(format!("1000 instances, {iterations} iterations, 0 violations"))
}

fn overlap_cardinality() -> Outcome {
    for (n, c, k, seeds) in [(3136usize, 96usize, 6u32, 3u64), (196, 32, 2, 10), (784, 16, 4, 5)] {
        for seed in 0..seeds {
            let tokens: Tensor<f32> = randn(&[n, c], &mut Rng::derive(seed, "acceptance-overlap"));
            let with = GroupingConfig::new(k, 5, 20);
            let without = GroupingConfig::new(k, 5, 0);
            let a = balanced_hierarchical_cluster(&tokens, &with).map_err(|e| e.to_string())?;
            let b = balanced_hierarchical_cluster(&tokens, &without).map_err(|e| e.to_string())?;
            let m = n >> k;
            for pair in 0..a.clusters.len() / 2 {
                let (x, y) = (&a.clusters[2 * pair], &a.clusters[2 * pair + 1]);
                let xs: HashSet<_> = x.iter().collect();
                let shared = y.iter().filter(|t| xs.contains(t)).count();
                ensure(shared == 40 && x.len() == m + 20 && y.len() == m + 20, || {
                    format!("N={n} seed {seed} pair {pair}: shared {shared}, sizes {} {}", x.len(), y.len())
                })?;
            }
            let report = oracle::brute_force_assignment_check(&tokens, &a, &with);
            ensure(report.passed(), || format!("N={n} seed {seed}: {report}"))?;
            // n = 0 must be the plain last-level partition of the same splits.
            ensure(a.levels == b.levels, || format!("N={n} seed {seed}: overlap changed the splits"))?;
            for (j, cl) in b.clusters.iter().enumerate() {
                let mut from_levels: Vec<usize> = (0..n).filter(|&t| b.levels[k as usize][t] == j).collect();
                let mut got = cl.clone();
                got.sort_unstable();
                from_levels.sort_unstable();
                ensure(got == from_levels, || format!("N={n} seed {seed}: cluster {j} differs from partition"))?;
                let trimmed: Vec<usize> =
                    if j % 2 == 0 { a.clusters[j][..m].to_vec() } else { a.clusters[j][20..].to_vec() };
                ensure(trimmed == *cl, || format!("N={n} seed {seed}: cluster {j} is not the overlap core"))?;
            }
        }
    }
    Ok("sibling pairs share 40, sizes m+20; n=0 equals the partition".into())
}

fn fsla_degeneracy() -> Outcome {
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for i in 0..20u64 {
        let mut rng = Rng::derive(i, "acceptance-fsla");
        let (h, w) = [(4, 4), (5, 6), (7, 7), (3, 8)][i as usize % 4];
        let heads = 1 + rng.below(4);
        let c = heads * (2 + rng.below(6));
        let x: Tensor<f64> = randn(&[h * w, c], &mut rng);
        let p = AttentionParams::<f64>::random(c, heads, true, None, 1.0 / (c as f64).sqrt(), &mut rng);
        let cfg = GroupingConfig::new(0, 5, 0);
        let want = oracle::global_multihead_attention(&x, &p, (h, w)).map_err(|e| e.to_string())?;
        let got64 = fsla_forward(&x, &p, &cfg, (h, w)).map_err(|e| e.to_string())?;
        worst64 = worst64.max(got64.max_abs_diff(&want).unwrap());
        // f32 run, compared with the oracle on the same rounded inputs.
        let (x32, p32) = (x.cast::<f32>(), p.cast::<f32>());
        let want32 = oracle::global_multihead_attention(&x32.cast(), &p32.cast(), (h, w)).map_err(|e| e.to_string())?;
        let got32 = fsla_forward(&x32, &p32, &cfg, (h, w)).map_err(|e| e.to_string())?;
        worst32 = worst32.max(got32.cast::<f64>().max_abs_diff(&want32).unwrap());
    }
    ensure(worst32 < 1e-5 && worst64 < 1e-12, || format!("f32 {worst32:.2e}, f64 {worst64:.2e}"))?;
    Ok(format!("20 instances; max abs diff f32 {worst32:.2e}, f64 {worst64:.2e}"))
}

fn isla_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = Rng::derive(i, "acceptance-isla");
        let (h, w, ws) = [(14, 14, 7), (8, 8, 4), (7, 7, 7)][i as usize % 3];
        let heads = 1 + rng.below(3);
        let c = heads * (2 + rng.below(6));
        let x: Tensor<f32> = randn(&[h * w, c], &mut rng);
        let p = AttentionParams::<f32>::random(c, heads, false, Some(ws), 1.0 / (c as f64).sqrt(), &mut rng);
        let got = isla_swin_forward(&x, &p, WindowConfig::new(ws, 0), (h, w)).map_err(|e| e.to_string())?;
        let per_row = w / ws;
        let window_of: Vec<usize> = (0..h * w).map(|t| (t / w / ws) * per_row + (t % w) / ws).collect();
        let coords: Vec<(usize, usize)> = (0..h * w).map(|t| ((t / w) % ws, (t % w) % ws)).collect();
        let want = oracle::masked_window_attention_oracle(&x.cast(), &p.cast(), &window_of, &coords, ws)
            .map_err(|e| e.to_string())?;
        worst = worst.max(got.cast::<f64>().max_abs_diff(&want).unwrap());
    }
    ensure(worst < 1e-5, || format!("max abs diff {worst:.2e}"))?;
    Ok(format!("20 instances (f32); max abs diff {worst:.2e}"))
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let mut rng = Rng::derive(i, "acceptance-grad");
        let m = 1 + rng.below(16);
        let d = 1 + rng.below(8);
        let q: Tensor<f64> = randn(&[m, d], &mut rng);
        let k: Tensor<f64> = randn(&[m, d], &mut rng);
        let v: Tensor<f64> = randn(&[m, d], &mut rng);
        let up: Tensor<f64> = randn(&[m, d], &mut rng);
        let g = attention_backward(&q, &k, &v, &up).map_err(|e| e.to_string())?;
        let loss = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>| -> f64 {
            let out = oracle::naive_global_attention(q, k, v).unwrap();
            out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let fd = |which: usize| {
            let x = [&q, &k, &v][which];
            oracle::finite_difference_grad(
                |t| match which {
                    0 => loss(t, &k, &v),
                    1 => loss(&q, t, &v),
                    _ => loss(&q, &k, t),
                },
                x,
                1e-5,
            )
            .unwrap()
        };
        for (which, analytic) in [&g.dq, &g.dk, &g.dv].into_iter().enumerate() {
            let numeric = fd(which);
            // Single-token instances have an exactly zero q/k gradient.
            let err = if numeric.data().iter().all(|&x| x.abs() < 1e-9) {
                analytic.data().iter().fold(0.0f64, |a, &x| a.max(x.abs()))
            } else {
                oracle::max_relative_error(analytic, &numeric)
            };
            worst = worst.max(err);
        }
    }
    ensure(worst < 1e-6, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("50 instances; max relative error {worst:.2e}"))
}

fn pyramid_shapes() -> Outcome {
    let cfg = ModelConfig::tiny_like();
    let params = ModelParams::<f32>::init(&cfg, 0).map_err(|e| e.to_string())?;
    let img: Tensor<f32> = randn(&[3, 224, 224], &mut Rng::new(7));
    let t = Instant::now();
    let out = boat_forward(&img, &cfg, &params).map_err(|e| e.to_string())?;
    let tokens: Vec<usize> = out.stages.iter().map(|s| s.tokens).collect();
    let channels: Vec<usize> = out.stages.iter().map(|s| s.channels).collect();
    ensure(tokens == [3136, 784, 196, 49] && channels == [96, 192, 384, 768], || {
        format!("tokens {tokens:?}, channels {channels:?}")
    })?;
    ensure(out.logits.shape() == [1000], || format!("logits {:?}", out.logits.shape()))?;
    Ok(format!("tokens {tokens:?}, channels {channels:?}, forward {:.1}s", t.elapsed().as_secs_f64()))
}

fn parameter_accounting() -> Outcome {
    let cfg = ModelConfig::tiny_like();
    let boat = count_params(&cfg).map_err(|e| e.to_string())?;
    let swin = count_params(&cfg.without_fsla()).map_err(|e| e.to_string())?;
    let stored = ModelParams::<f32>::zeros(&cfg).map_err(|e| e.to_string())?.num_scalars();
    let rel = (boat as f64 - 31e6).abs() / 31e6;
    let delta = boat as i64 - swin as i64;
    ensure(rel <= 0.10, || format!("{boat} is {:.1}% from 31M", rel * 100.0))?;
    ensure(delta > 0 && delta < 5_000_000, || format!("delta {delta}"))?;
    ensure(stored == boat, || format!("closed form {boat} != materialized {stored}"))?;
    Ok(format!(
        "{:.2}M ({:+.1}% vs 31M), delta {:.2}M, materialized count equal",
        boat as f64 / 1e6,
        (boat as f64 / 31e6 - 1.0) * 100.0,
        delta as f64 / 1e6
    ))
}

fn flops_law() -> Outcome {
    let mut cfg = ModelConfig::tiny_like();
    cfg.overlap = 0;
    cfg.fsla_every = [1; 4];
    let r = estimate_flops(&cfg).map_err(|e| e.to_string())?;
    let mut ks = Vec::new();
    for s in &r.stages {
        ensure(s.fsla_attention_macs << s.levels == s.global_attention_macs, || {
            format!("K={}: {} vs {}", s.levels, s.fsla_attention_macs, s.global_attention_macs)
        })?;
        ensure(s.global_attention_macs == global_attention_macs(s.tokens, s.channels), || "global term".into())?;
        ks.push(s.levels);
    }
    ensure(ks == [6, 4, 2, 0], || format!("levels {ks:?}"))?;
    let tiny = estimate_flops(&ModelConfig::tiny_like()).map_err(|e| e.to_string())?;
    // The reference figure counts multiply-accumulates.
    let rel = (tiny.macs as f64 - 5.2e9).abs() / 5.2e9;
    ensure(rel <= 0.15, || format!("{} MACs is {:.1}% from 5.2G", tiny.macs, rel * 100.0))?;
    Ok(format!(
        "law holds for K {ks:?}; Tiny {:.2}G MACs ({:+.1}% vs 5.2G), {:.2}G FLOPs",
        tiny.macs as f64 / 1e9,
        (tiny.macs as f64 / 5.2e9 - 1.0) * 100.0,
        tiny.flops as f64 / 1e9
    ))
}

fn run_boat(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_boat")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("boat {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let tokens: Tensor<f32> = randn(&[3136, 96], &mut Rng::new(11));
    format::save(p("tokens.boatt"), &DynTensor::F32(tokens)).map_err(|e| e.to_string())?;
    for (dir, threads) in [("c1", "1"), ("c2", "1"), ("c8", "8")] {
        run_boat(&[
            "--threads",
            threads,
            "cluster",
            "--tokens",
            &p("tokens.boatt"),
            "--levels",
            "6",
            "--overlap",
            "20",
            "--seed",
            "3",
            "--out",
            &p(dir),
            "--spatial",
            "56",
            "56",
        ])?;
    }
    let c1 = dir_bytes(&tmp.path().join("c1"));
    ensure(c1.len() == 5, || format!("cluster wrote {} files", c1.len()))?;
    ensure(c1 == dir_bytes(&tmp.path().join("c2")), || "cluster rerun differs".into())?;
    ensure(c1 == dir_bytes(&tmp.path().join("c8")), || "cluster --threads 8 differs".into())?;

    let cfg = ModelConfig {
        input_height: 64,
        input_width: 64,
        embed_dim: 16,
        depths: [2, 2, 2, 2],
        num_heads: [2, 4, 4, 8],
        window_size: 4,
        target_cluster_size: 16,
        overlap: 4,
        num_classes: 10,
        fsla_every: [1, 1, 1, 1],
        ..ModelConfig::tiny_like()
    };
    fs::write(p("cfg.json"), serde_json::to_string(&cfg).unwrap()).map_err(|e| e.to_string())?;
    let img: Tensor<f32> = randn(&[3, 64, 64], &mut Rng::new(12));
    format::save(p("img.boatt"), &DynTensor::F32(img)).map_err(|e| e.to_string())?;
    for (out, threads) in [("f1.boatt", "1"), ("f2.boatt", "1"), ("f8.boatt", "8")] {
        run_boat(&[
            "--threads",
            threads,
            "forward",
            "--config",
            &p("cfg.json"),
            "--random-seed",
            "5",
            "--input",
            &p("img.boatt"),
            "--out",
            &p(out),
        ])?;
    }
    let f1 = fs::read(p("f1.boatt")).unwrap();
    ensure(f1 == fs::read(p("f2.boatt")).unwrap(), || "forward rerun differs".into())?;
    ensure(f1 == fs::read(p("f8.boatt")).unwrap(), || "forward --threads 8 differs".into())?;
    Ok("cluster and forward byte-identical across reruns and --threads 1/8".into())
}

fn baseline_groupers() -> Outcome {
    for seed in 0..100u64 {
        let mut rng = Rng::derive(seed, "acceptance-baselines");
        let groups = 1 + rng.below(8);
        let size = 1 + rng.below(16);
        let n = groups * size;
        let c = 1 + rng.below(8);
        let tokens: Tensor<f64> = randn(&[n, c], &mut rng);
        let clusters = 1 + rng.below(n.min(6));
        let km = kmeans_sort_divide(&tokens, clusters, size, 5, seed).map_err(|e| e.to_string())?;
        check_grouping(&km.groups, n, size).map_err(|e| format!("kmeans seed {seed}: {e}"))?;
        ensure(km.labels.iter().all(|&l| l < clusters), || format!("kmeans seed {seed}: label range"))?;
        let order: Vec<usize> = km.groups.iter().flatten().map(|&t| km.labels[t]).collect();
        ensure(order.windows(2).all(|w| w[0] <= w[1]), || format!("kmeans seed {seed}: not sorted by label"))?;

        let bits = 1 + rng.below(8);
        let buckets = lsh_bucketize(&tokens, bits, seed).map_err(|e| e.to_string())?;
        let proj = lsh_projections(c, bits, seed).map_err(|e| e.to_string())?;
        for (t, &b) in buckets.iter().enumerate() {
            let want = (0..bits).fold(0u64, |acc, j| {
                let dot: f64 = tokens.row(t).iter().zip(proj.row(j)).map(|(a, b)| a * b).sum();
                acc | (u64::from(dot > 0.0) << j)
            });
            ensure(b == want, || format!("lsh seed {seed}: token {t} bucket {b} != {want}"))?;
        }
        let lsh_groups = lsh_sort_divide(&tokens, bits, size, seed).map_err(|e| e.to_string())?;
        check_grouping(&lsh_groups, n, size).map_err(|e| format!("lsh seed {seed}: {e}"))?;
    }

    // Four tokens in one blob, two in another, groups of three: the big blob
    // is cut across two groups and one group mixes both blobs.
    let blobs = Tensor::from_rows(&[
        vec![10.0, 0.1],
        vec![10.1, 0.0],
        vec![9.9, -0.1],
        vec![10.0, 0.2],
        vec![-10.0, 0.0],
        vec![-10.1, 0.1],
    ])
    .unwrap();
    for seed in 0..10 {
        let g = kmeans_sort_divide(&blobs, 2, 3, 10, seed).map_err(|e| e.to_string())?;
        let mixed = g.groups.iter().filter(|grp| grp.iter().any(|&i| i < 4) && grp.iter().any(|&i| i >= 4)).count();
        let a_groups = g.groups.iter().filter(|grp| grp.iter().any(|&i| i < 4)).count();
        ensure(mixed == 1 && a_groups == 2, || format!("two-blob seed {seed}: groups {:?}", g.groups))?;
    }
    Ok("100 sets valid for both; two-blob example splits the large blob and mixes one group".into())
}

fn check_grouping(groups: &[Vec<usize>], n: usize, size: usize) -> Result<(), String> {
    ensure(groups.iter().all(|g| g.len() == size), || "unequal group sizes".into())?;
    let mut seen = vec![false; n];
    for &t in groups.iter().flatten() {
        ensure(t < n && !seen[t], || format!("token {t} out of range or repeated"))?;
        seen[t] = true;
    }
    ensure(seen.iter().all(|&s| s), || "not a partition".into())
}

fn residual_identity() -> Outcome {
    let cfg = ModelConfig {
        input_height: 64,
        input_width: 64,
        embed_dim: 16,
        depths: [2, 1, 1, 1],
        num_heads: [2, 2, 4, 4],
        window_size: 4,
        target_cluster_size: 16,
        overlap: 4,
        num_classes: 3,
        fsla_every: [1; 4],
        ..ModelConfig::tiny_like()
    };
    let plan = cfg.stage_plan().map_err(|e| e.to_string())?;
    let mut params = ModelParams::<f32>::init(&cfg, 9).map_err(|e| e.to_string())?;
    let stage = &mut params.stages[0];
    for block in &mut stage.blocks {
        for att in [Some(&mut block.isla), block.fsla.as_mut()].into_iter().flatten() {
            att.w_o = Tensor::zeros(att.w_o.shape());
            att.b_o = Tensor::zeros(att.b_o.shape());
        }
        block.mlp.w2 = Tensor::zeros(block.mlp.w2.shape());
        block.mlp.b2 = Tensor::zeros(block.mlp.b2.shape());
    }
    let sp = &plan[0];
    let settings = BlockSettings {
        window: sp.window,
        grouping: sp.grouping(&cfg),
        features: cfg.cluster_features,
        eps: cfg.layer_norm_eps,
    };
    for i in 0..10u64 {
        let x: Tensor<f32> = randn(&[sp.tokens(), sp.channels], &mut Rng::derive(i, "acceptance-residual"));
        for (j, block) in stage.blocks.iter().enumerate() {
            let out = bla_block_forward(&x, block, (sp.height, sp.width), j % 2 == 1, &settings)
                .map_err(|e| e.to_string())?;
            let same = out.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("input {i}, block {j}: output differs from input"))?;
        }
    }
    Ok("10 inputs, shifted and unshifted blocks, bit-exact".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("balance and partition", balance_and_partition),
        ("ranking property", ranking_property),
        ("overlap cardinality", overlap_cardinality),
        ("FSLA degeneracy", fsla_degeneracy),
        ("ISLA equivalence", isla_equivalence),
        ("gradient correctness", gradient_correctness),
        ("pyramid shapes", pyramid_shapes),
        ("parameter accounting", parameter_accounting),
        ("FLOPs law", flops_law),
        ("determinism", determinism),
        ("baseline groupers", baseline_groupers),
        ("residual identity", residual_identity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
