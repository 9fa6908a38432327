//! The `boat` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 invariant or validation failure,
//! 3 I/O failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::format::{self, DynTensor};
use crate::grouping::{balanced_hierarchical_cluster, ClusterAssignment, GroupingConfig, RankingMode};
use crate::model::{
    boat_forward, count_params, estimate_flops, fsla_attention_macs, global_attention_macs, ModelConfig, ModelParams,
};
use crate::numeric::{Element, Rng, Tensor};
use crate::{oracle, selftest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable naming a fault for `selftest` to inject.
pub const FAULT_ENV: &str = "BOAT_FAULT";

#[derive(Parser, Debug)]
#[command(name = "boat", version, about = "Bilateral local attention toolkit")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Balanced hierarchical clustering of a [N, C] token tensor.
    Cluster(ClusterArgs),
    /// Forward pass of a [3, H, W] image through a model.
    Forward(ForwardArgs),
    /// Parameter count and FLOPs estimate of a model config.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Oracle and property checks against the kernels.
    Selftest {
        #[arg(long, conflicts_with = "full")]
        quick: bool,
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time clustering and a model forward pass.
    Bench {
        /// Model config; defaults to the Tiny-like preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write initialized model weights.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a tensor of standard normal samples.
    Random {
        #[arg(long, num_args = 1.., required = true)]
        shape: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "f32")]
        dtype: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    levels: u32,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    overlap: usize,
    #[arg(long, default_value = "ratio")]
    ranking: RankingMode,
    /// Recorded in the stats; clustering itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a PGM map of cluster ids laid out as H × W.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    spatial: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct ForwardArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, conflicts_with = "random_seed", required_unless_present = "random_seed")]
    weights: Option<PathBuf>,
    #[arg(long)]
    random_seed: Option<u64>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return EXIT_USAGE;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_IO;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Cluster(a) => cmd_cluster(&a).map(|_| EXIT_OK),
        Command::Forward(a) => cmd_forward(&a).map(|_| EXIT_OK),
        Command::Report { config } => cmd_report(&config).map(|_| EXIT_OK),
        Command::Selftest { full, seed, .. } => cmd_selftest(full, seed),
        Command::Bench { config, repeat, seed } => cmd_bench(config.as_deref(), repeat, seed).map(|_| EXIT_OK),
        Command::Init { config, seed, out } => {
            let cfg = load_config(&config)?;
            let params = ModelParams::<f32>::init(&cfg, seed)?;
            let flat = params.to_flat();
            let n = flat.len();
            format::save(&out, &DynTensor::F32(Tensor::new(vec![n], flat)?))?;
            println!("wrote {n} parameters to {}", out.display());
            Ok(EXIT_OK)
        }
        Command::Random { shape, seed, dtype, out } => {
            let mut rng = Rng::derive(seed, "cli-random");
            let t = Tensor::<f64>::from_fn(&shape, |_| rng.normal());
            let t = match dtype.as_str() {
                "f32" => DynTensor::F32(t.cast()),
                "f64" => DynTensor::F64(t),
                other => return Err(Error::InvalidArgument(format!("unknown dtype {other:?}"))),
            };
            format::save(&out, &t)?;
            Ok(EXIT_OK)
        }
    }
}

fn load_config(path: &Path) -> Result<ModelConfig> {
    ModelConfig::from_json(&fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
}

fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let cfg = GroupingConfig { levels: a.levels, iters: a.iters, overlap: a.overlap, ranking_mode: a.ranking };
    let input = format::load(&a.tokens)?;
    if input.shape().len() != 2 {
        return Err(Error::shape("cluster", format!("tokens must be [N, C], got {:?}", input.shape())));
    }
    if let Some(s) = &a.spatial {
        if s[0] * s[1] != input.shape()[0] {
            return Err(Error::shape(
                "cluster",
                format!("--spatial {}x{} does not cover {} tokens", s[0], s[1], input.shape()[0]),
            ));
        }
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io_at(&a.out, e))?;
    match input {
        DynTensor::F32(t) => write_cluster_outputs(&t, &cfg, a),
        DynTensor::F64(t) => write_cluster_outputs(&t, &cfg, a),
    }
}

fn write_cluster_outputs<T: Element>(tokens: &Tensor<T>, cfg: &GroupingConfig, a: &ClusterArgs) -> Result<()>
where
    DynTensor: From<Tensor<T>>,
{
    let assignment = balanced_hierarchical_cluster(tokens, cfg)?;
    let report = oracle::brute_force_assignment_check(tokens, &assignment, cfg);
    if !report.passed() {
        return Err(Error::InvalidArgument(format!("assignment check failed: {report}")));
    }
    let (n, c) = tokens.dims2()?;

    let mut csv = String::from("token_index,level,cluster_index\n");
    for (level, map) in assignment.levels.iter().enumerate() {
        for (tok, cl) in map.iter().enumerate() {
            writeln!(csv, "{tok},{level},{cl}").unwrap();
        }
    }
    write_file(&a.out.join("assignment.csv"), csv)?;

    let mut members = String::from("cluster_index,position,token_index\n");
    for (j, cl) in assignment.clusters.iter().enumerate() {
        for (pos, tok) in cl.iter().enumerate() {
            writeln!(members, "{j},{pos},{tok}").unwrap();
        }
    }
    write_file(&a.out.join("clusters.csv"), members)?;

    let centroids = cluster_centroids(tokens, &assignment.clusters);
    let cos = mean_cosines(tokens, &assignment.clusters, &centroids);
    let cent = Tensor::<T>::new(
        vec![assignment.clusters.len(), c],
        centroids.iter().flatten().map(|&v| T::from_f64(v)).collect(),
    )?;
    format::save(a.out.join("centroids.boatt"), &DynTensor::from(cent))?;

    let mut stats = String::new();
    writeln!(stats, "tokens {n}").unwrap();
    writeln!(stats, "channels {c}").unwrap();
    writeln!(stats, "dtype {}", T::DTYPE.name()).unwrap();
    writeln!(stats, "levels {}", cfg.levels).unwrap();
    writeln!(stats, "iterations {}", cfg.iters).unwrap();
    writeln!(stats, "overlap {}", assignment.overlap).unwrap();
    writeln!(stats, "ranking {:?}", cfg.ranking_mode).unwrap();
    writeln!(stats, "seed {}", a.seed).unwrap();
    writeln!(stats, "clusters {}", assignment.clusters.len()).unwrap();
    writeln!(stats, "check {report}").unwrap();
    let overall = cos.iter().sum::<f64>() / cos.len() as f64;
    writeln!(stats, "mean_intra_cluster_cosine {overall:.6}").unwrap();
    writeln!(stats, "cluster size mean_cosine").unwrap();
    for (j, (cl, cs)) in assignment.clusters.iter().zip(&cos).enumerate() {
        writeln!(stats, "{j} {} {cs:.6}", cl.len()).unwrap();
    }
    write_file(&a.out.join("stats.txt"), &stats)?;

    if let Some(s) = &a.spatial {
        write_file(&a.out.join("clusters.pgm"), cluster_pgm(&assignment, s[0], s[1]))?;
    }
    println!("{} clusters of sizes {:?}", assignment.clusters.len(), dedup(&assignment.cluster_sizes()));
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io_at(path, e))
}

fn dedup(sizes: &[usize]) -> Vec<usize> {
    let mut v = sizes.to_vec();
    v.dedup();
    v
}

fn cluster_centroids<T: Element>(tokens: &Tensor<T>, clusters: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let c = tokens.last_dim();
    clusters
        .iter()
        .map(|cl| {
            let mut sum = vec![0.0; c];
            for &t in cl {
                for (s, v) in sum.iter_mut().zip(tokens.row(t)) {
                    *s += v.as_f64();
                }
            }
            sum.iter().map(|s| s / cl.len() as f64).collect()
        })
        .collect()
}

fn mean_cosines<T: Element>(tokens: &Tensor<T>, clusters: &[Vec<usize>], centroids: &[Vec<f64>]) -> Vec<f64> {
    clusters
        .iter()
        .zip(centroids)
        .map(|(cl, mu)| {
            let mu_norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let total: f64 = cl
                .iter()
                .map(|&t| {
                    let row = tokens.row(t);
                    let dot: f64 = row.iter().zip(mu).map(|(a, b)| a.as_f64() * b).sum();
                    let norm = row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt().max(1e-12);
                    dot / (norm * mu_norm)
                })
                .sum();
            total / cl.len() as f64
        })
        .collect()
}

/// Plain (P2) PGM of last-level cluster ids, spread over 0..=255.
fn cluster_pgm<T>(a: &ClusterAssignment<T>, h: usize, w: usize) -> String {
    let map = &a.levels[a.levels.len() - 1];
    let top = (a.clusters.len().max(2) - 1) as f64;
    let mut out = format!("P2\n{w} {h}\n255\n");
    for y in 0..h {
        let row: Vec<String> =
            (0..w).map(|x| ((map[y * w + x] as f64 * 255.0 / top).round() as u32).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn cmd_forward(a: &ForwardArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let params = match (&a.weights, a.random_seed) {
        (Some(path), _) => {
            let flat = format::load(path)?;
            if flat.shape().len() != 1 {
                return Err(Error::shape("forward", format!("weights must be 1-D, got {:?}", flat.shape())));
            }
            ModelParams::from_flat(&cfg, flat.to_f32().data())?
        }
        (None, Some(seed)) => ModelParams::<f32>::init(&cfg, seed)?,
        (None, None) => return Err(Error::InvalidArgument("need --weights or --random-seed".into())),
    };
    let img = format::load(&a.input)?.to_f32();
    let out = boat_forward(&img, &cfg, &params)?;
    for (i, s) in out.stages.iter().enumerate() {
        println!("stage {}: {}x{} = {} tokens, {} channels", i + 1, s.height, s.width, s.tokens, s.channels);
    }
    println!("logits {}", out.logits.len());
    format::save(&a.out, &DynTensor::F32(out.logits))
}

fn cmd_report(path: &Path) -> Result<()> {
    let cfg = load_config(path)?;
    let params = count_params(&cfg)?;
    let baseline = count_params(&cfg.without_fsla())?;
    let flops = estimate_flops(&cfg)?;
    println!("parameters {params} ({:.2}M)", params as f64 / 1e6);
    println!("parameters_without_fsla {baseline} ({:.2}M)", baseline as f64 / 1e6);
    println!("fsla_parameter_delta {} ({:.2}M)", params - baseline, (params - baseline) as f64 / 1e6);
    println!("macs {} ({:.2}G)", flops.macs, flops.macs as f64 / 1e9);
    println!("flops {} ({:.2}G)", flops.flops, flops.flops as f64 / 1e9);
    for (i, s) in flops.stages.iter().enumerate() {
        let plain = fsla_attention_macs(s.tokens, s.channels, s.levels, 0);
        let global = global_attention_macs(s.tokens, s.channels);
        println!(
            "stage {}: tokens {} channels {} K {} fsla_layers {} fsla/global attention {:.6} (2^-{}){}",
            i + 1,
            s.tokens,
            s.channels,
            s.levels,
            s.fsla_layers,
            plain as f64 / global as f64,
            s.levels,
            if s.overlap > 0 {
                format!(", with overlap {:.6}", s.fsla_attention_macs as f64 / global as f64)
            } else {
                String::new()
            }
        );
    }
    Ok(())
}

fn cmd_selftest(full: bool, seed: u64) -> Result<i32> {
    let fault: selftest::Fault = std::env::var(FAULT_ENV).unwrap_or_default().parse()?;
    let mode = if full { selftest::Mode::Full } else { selftest::Mode::Quick };
    let start = Instant::now();
    let report = selftest::run(mode, fault, seed);
    print!("{report}");
    let verdict = if report.passed() { "passed" } else { "FAILED" };
    println!("selftest {verdict} in {:.1}s", start.elapsed().as_secs_f64());
    Ok(if report.passed() { EXIT_OK } else { EXIT_INVALID })
}

fn cmd_bench(config: Option<&Path>, repeat: usize, seed: u64) -> Result<()> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => ModelConfig::tiny_like(),
    };
    let mut rng = Rng::derive(seed, "bench-tokens");
    let tokens = Tensor::<f32>::from_fn(&[3136, 96], |_| rng.normal() as f32);
    let gcfg = GroupingConfig::new(6, 5, 20);
    let params = ModelParams::<f32>::init(&cfg, seed)?;
    let mut rng = Rng::derive(seed, "bench-image");
    let img = Tensor::<f32>::from_fn(&[3, cfg.input_height, cfg.input_width], |_| rng.normal() as f32);
    for r in 0..repeat.max(1) {
        let t = Instant::now();
        balanced_hierarchical_cluster(&tokens, &gcfg)?;
        let cluster = t.elapsed();
        let t = Instant::now();
        boat_forward(&img, &cfg, &params)?;
        println!(
            "run {r}: cluster 3136x96 K=6 {:.3}s, forward {}x{} {:.3}s",
            cluster.as_secs_f64(),
            cfg.input_height,
            cfg.input_width,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
