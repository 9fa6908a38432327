//! Closed-form parameter and multiply-accumulate counts.
//!
//! MAC rules: a `[m, k] · [k, n]` matmul is `m·k·n`; a convolution is
//! `output positions · C_out · C_in/groups · k²`. Attention counts the score
//! and value products (`2·M²·d` per group of `M` tokens). Clustering counts
//! two centroid dot products and one centroid accumulation per token,
//! channel, iteration and level. Normalizations, softmax, GELU, biases and
//! residual additions are not counted. `flops = 2 · macs`.

use super::{ModelConfig, StagePlan, IN_CHANNELS, MERGE_KERNEL, PATCH_KERNEL};
use crate::error::Result;

/// Score plus value MACs of full attention over `tokens` tokens of `channels` width.
pub fn global_attention_macs(tokens: usize, channels: usize) -> u64 {
    2 * (tokens as u64).pow(2) * channels as u64
}

/// Score plus value MACs of feature-space attention: `2^K` clusters of
/// `N/2^K + n` tokens (`n` only when `K > 0`).
pub fn fsla_attention_macs(tokens: usize, channels: usize, levels: u32, overlap: usize) -> u64 {
    let clusters = 1u64 << levels;
    let size = (tokens as u64 >> levels) + if levels > 0 { overlap as u64 } else { 0 };
    2 * clusters * size * size * channels as u64
}

fn attention_params(c: usize, lepe: bool, window: Option<(usize, usize)>) -> usize {
    let mut n = 4 * c * c + 4 * c;
    if lepe {
        n += 9 * c + c;
    }
    if let Some((w, heads)) = window {
        n += (2 * w - 1) * (2 * w - 1) * heads;
    }
    n
}

fn block_params(sp: &StagePlan, ratio: usize, with_fsla: bool) -> usize {
    let c = sp.channels;
    let ln = 2 * c;
    let mlp = 2 * c * ratio * c + ratio * c + c;
    let mut n = ln + attention_params(c, false, Some((sp.window, sp.heads))) + ln + mlp;
    if with_fsla {
        n += ln + attention_params(c, true, None);
    }
    n
}

/// Exact number of scalar parameters implied by `cfg`.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    let plan = cfg.stage_plan()?;
    let c = cfg.embed_dim;
    let mut total = c * IN_CHANNELS * PATCH_KERNEL * PATCH_KERNEL + c;
    for (i, sp) in plan.iter().enumerate() {
        if i > 0 {
            let cin = sp.channels / 2;
            total += sp.channels * cin * MERGE_KERNEL * MERGE_KERNEL + sp.channels;
        }
        total += sp.fsla_blocks.iter().map(|&f| block_params(sp, cfg.mlp_ratio, f)).sum::<usize>();
    }
    let last = plan[plan.len() - 1].channels;
    total += 2 * last + last * cfg.num_classes + cfg.num_classes;
    Ok(total)
}

/// Per-stage attention terms, per feature-space attention layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageFlops {
    pub tokens: usize,
    pub channels: usize,
    pub levels: u32,
    pub overlap: usize,
    pub fsla_layers: usize,
    pub fsla_attention_macs: u64,
    pub global_attention_macs: u64,
    /// Everything in the stage, merge included.
    pub total_macs: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopsReport {
    pub patch_embed: u64,
    pub merges: u64,
    pub isla_projections: u64,
    pub isla_attention: u64,
    pub fsla_projections: u64,
    pub fsla_attention: u64,
    pub fsla_lepe: u64,
    pub fsla_clustering: u64,
    pub mlp: u64,
    pub head: u64,
    pub macs: u64,
    pub flops: u64,
    pub stages: Vec<StageFlops>,
}

/// Closed-form MAC and FLOP counts of one forward pass.
pub fn estimate_flops(cfg: &ModelConfig) -> Result<FlopsReport> {
    let plan = cfg.stage_plan()?;
    let mut r = FlopsReport::default();
    let (h1, w1) = (plan[0].height as u64, plan[0].width as u64);
    let c0 = cfg.embed_dim as u64;
    r.patch_embed = h1 * w1 * c0 * (IN_CHANNELS * PATCH_KERNEL * PATCH_KERNEL) as u64;

    for (i, sp) in plan.iter().enumerate() {
        let n = sp.tokens() as u64;
        let c = sp.channels as u64;
        let mut stage = 0u64;
        if i > 0 {
            let merge = n * c * (c / 2) * (MERGE_KERNEL * MERGE_KERNEL) as u64;
            r.merges += merge;
            stage += merge;
        }
        let w = sp.window as u64;
        let windows = (sp.height as u64).div_ceil(w) * (sp.width as u64).div_ceil(w);
        let isla_proj = 4 * n * c * c;
        let isla_attn = windows * 2 * (w * w).pow(2) * c;
        let mlp = 2 * n * c * (cfg.mlp_ratio as u64 * c);
        let fsla_layers = sp.fsla_blocks.iter().filter(|&&f| f).count();
        let fsla_attn = fsla_attention_macs(sp.tokens(), sp.channels, sp.levels, sp.overlap);
        let fsla_proj = 4 * n * c * c;
        let lepe = 9 * n * c;
        let clustering = 3 * n * c * cfg.cluster_iters as u64 * sp.levels as u64;

        let depth = sp.depth as u64;
        let f = fsla_layers as u64;
        r.isla_projections += depth * isla_proj;
        r.isla_attention += depth * isla_attn;
        r.mlp += depth * mlp;
        r.fsla_projections += f * fsla_proj;
        r.fsla_attention += f * fsla_attn;
        r.fsla_lepe += f * lepe;
        r.fsla_clustering += f * clustering;
        stage += depth * (isla_proj + isla_attn + mlp) + f * (fsla_proj + fsla_attn + lepe + clustering);

        r.stages.push(StageFlops {
            tokens: sp.tokens(),
            channels: sp.channels,
            levels: sp.levels,
            overlap: sp.overlap,
            fsla_layers,
            fsla_attention_macs: fsla_attn,
            global_attention_macs: global_attention_macs(sp.tokens(), sp.channels),
            total_macs: stage,
        });
    }
    r.head = (plan[plan.len() - 1].channels * cfg.num_classes) as u64;
    r.macs = r.patch_embed
        + r.merges
        + r.isla_projections
        + r.isla_attention
        + r.fsla_projections
        + r.fsla_attention
        + r.fsla_lepe
        + r.fsla_clustering
        + r.mlp
        + r.head;
    r.flops = 2 * r.macs;
    Ok(r)
}
