//! Runs the oracle and property checks against the production kernels.

use std::fmt;
use std::str::FromStr;

use crate::attention::{attention_backward, fsla_forward, isla_swin_forward, AttentionParams, WindowConfig};
use crate::error::{Error, Result};
use crate::format::{decode, encode, DynTensor};
use crate::grouping::{balanced_hierarchical_cluster, balanced_hierarchical_cluster_with_key, GroupingConfig};
use crate::model::{count_params, fsla_attention_macs, global_attention_macs, ModelConfig, ModelParams};
use crate::numeric::{Rng, Tensor};
use crate::oracle;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Quick,
    Full,
}

/// Deliberate defects for checking that the harness notices them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Rank tokens by the inverted similarity ratio.
    Ratio,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" | "none" => Ok(Fault::None),
            "ratio" => Ok(Fault::Ratio),
            other => Err(Error::InvalidArgument(format!("unknown fault {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn check(name: &'static str, body: impl FnOnce() -> Result<std::result::Result<String, String>>) -> CheckResult {
    match body() {
        Ok(Ok(detail)) => CheckResult { name, passed: true, detail },
        Ok(Err(detail)) => CheckResult { name, passed: false, detail },
        Err(e) => CheckResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn grouping_check(mode: Mode, fault: Fault, seed: u64) -> CheckResult {
    check("balanced clustering", || {
        let (sets, n, c, k) = match mode {
            Mode::Quick => (5, 784, 32, 4),
            Mode::Full => (20, 3136, 96, 6),
        };
        let inverted = |s1: f32, s2: f32| crate::grouping::RankingMode::Ratio.key(s2, s1);
        for i in 0..sets {
            let mut rng = Rng::derive(seed, &format!("selftest-grouping-{i}"));
            let tokens: Tensor<f32> = randn(&[n, c], &mut rng).cast();
            for overlap in [0, 20] {
                let cfg = GroupingConfig::new(k, 5, overlap);
                let a = match fault {
                    Fault::None => balanced_hierarchical_cluster(&tokens, &cfg)?,
                    Fault::Ratio => balanced_hierarchical_cluster_with_key(&tokens, &cfg, &inverted)?,
                };
                let report = oracle::brute_force_assignment_check(&tokens, &a, &cfg);
                if let Some(v) = report.violations.first() {
                    return Ok(Err(format!("set {i}, n={overlap}: {v}")));
                }
            }
        }
        Ok(Ok(format!("{sets} sets of {n} tokens, K={k}, n in {{0, 20}}")))
    })
}

fn fsla_check(seed: u64) -> CheckResult {
    check("feature-space attention, K=0", || {
        let mut worst = 0.0f64;
        for i in 0..5 {
            let mut rng = Rng::derive(seed, &format!("selftest-fsla-{i}"));
            let (h, w, c, heads) = (4, 4, 8, 2);
            let x = randn(&[h * w, c], &mut rng);
            let p = AttentionParams::random(c, heads, true, None, 0.3, &mut rng);
            let got = fsla_forward(&x, &p, &GroupingConfig::new(0, 5, 0), (h, w))?;
            let want = oracle::global_multihead_attention(&x, &p, (h, w))?;
            worst = worst.max(got.max_abs_diff(&want)?);
        }
        let detail = format!("max abs diff {worst:.2e}");
        Ok(if worst < 1e-12 { Ok(detail) } else { Err(detail) })
    })
}

fn isla_check(seed: u64) -> CheckResult {
    check("window attention, no shift", || {
        let mut worst = 0.0f64;
        for (i, &(h, w, ws)) in [(14, 14, 7), (8, 8, 4), (7, 7, 7), (6, 9, 4)].iter().enumerate() {
            let mut rng = Rng::derive(seed, &format!("selftest-isla-{i}"));
            let c = 8;
            let x = randn(&[h * w, c], &mut rng);
            let p = AttentionParams::random(c, 2, false, Some(ws), 0.3, &mut rng);
            let got = isla_swin_forward(&x, &p, WindowConfig::new(ws, 0), (h, w))?;
            let per_row = w.div_ceil(ws);
            let window_of: Vec<usize> = (0..h * w).map(|t| (t / w / ws) * per_row + (t % w) / ws).collect();
            let coords: Vec<(usize, usize)> = (0..h * w).map(|t| ((t / w) % ws, (t % w) % ws)).collect();
            let want = oracle::masked_window_attention_oracle(&x, &p, &window_of, &coords, ws)?;
            worst = worst.max(got.max_abs_diff(&want)?);
        }
        let detail = format!("max abs diff {worst:.2e}");
        Ok(if worst < 1e-12 { Ok(detail) } else { Err(detail) })
    })
}

fn gradient_check(seed: u64) -> CheckResult {
    check("attention gradients", || {
        let mut worst = 0.0f64;
        for i in 0..10 {
            let mut rng = Rng::derive(seed, &format!("selftest-grad-{i}"));
            let m = 1 + rng.below(16);
            let d = 1 + rng.below(8);
            let (q, k, v, up) = (
                randn(&[m, d], &mut rng),
                randn(&[m, d], &mut rng),
                randn(&[m, d], &mut rng),
                randn(&[m, d], &mut rng),
            );
            let grads = attention_backward(&q, &k, &v, &up)?;
            let loss = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>| -> f64 {
                let out = oracle::naive_global_attention(q, k, v).expect("shapes are fixed");
                out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let dq = oracle::finite_difference_grad(|t| loss(t, &k, &v), &q, 1e-5)?;
            let dk = oracle::finite_difference_grad(|t| loss(&q, t, &v), &k, 1e-5)?;
            let dv = oracle::finite_difference_grad(|t| loss(&q, &k, t), &v, 1e-5)?;
            for (a, b) in [(&grads.dq, &dq), (&grads.dk, &dk), (&grads.dv, &dv)] {
                worst = worst.max(oracle::max_relative_error(a, b));
            }
        }
        let detail = format!("max relative error {worst:.2e}");
        Ok(if worst < 1e-6 { Ok(detail) } else { Err(detail) })
    })
}

fn accounting_check() -> CheckResult {
    check("parameter and FLOPs accounting", || {
        let mut cfg = ModelConfig::tiny_like();
        cfg.input_height = 64;
        cfg.input_width = 64;
        cfg.target_cluster_size = 16;
        cfg.overlap = 4;
        let stored = ModelParams::<f32>::zeros(&cfg)?.num_scalars();
        let counted = count_params(&cfg)?;
        if stored != counted {
            return Ok(Err(format!("closed form {counted} != materialized {stored}")));
        }
        for k in [0u32, 2, 4, 6] {
            if fsla_attention_macs(3136, 96, k, 0) << k != global_attention_macs(3136, 96) {
                return Ok(Err(format!("attention term at K={k} is not global / 2^K")));
            }
        }
        Ok(Ok(format!("{counted} parameters, attention law holds for K in {{0,2,4,6}}")))
    })
}

fn format_check(seed: u64) -> CheckResult {
    check("BOATT round trip", || {
        let mut rng = Rng::derive(seed, "selftest-format");
        let t = randn(&[3, 5, 2], &mut rng);
        for dt in [DynTensor::F64(t.clone()), DynTensor::F32(t.cast())] {
            let bytes = encode(&dt)?;
            if decode(&bytes)? != dt {
                return Ok(Err(format!("{} tensor changed on round trip", dt.dtype().name())));
            }
        }
        Ok(Ok("f32 and f64 bit-identical".into()))
    })
}

/// Runs every check; `fault` is applied where it can be observed.
pub fn run(mode: Mode, fault: Fault, seed: u64) -> Report {
    let mut checks = vec![
        grouping_check(mode, fault, seed),
        fsla_check(seed),
        isla_check(seed),
        accounting_check(),
        format_check(seed),
    ];
    if mode == Mode::Full {
        checks.push(gradient_check(seed));
    }
    Report { checks }
}
