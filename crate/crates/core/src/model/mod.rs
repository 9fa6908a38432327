//! Four-stage pyramid model built from bilateral local attention blocks.
//!
//! Every block runs window attention, then (on the blocks selected by
//! [`ModelConfig::fsla_every`]) feature-space attention, then an MLP, each
//! behind a pre-norm residual. Stages are joined by strided 3×3 convolutions
//! that halve the spatial extent and double the channels.

mod accounting;
mod forward;
mod params;

pub use accounting::{
    count_params, estimate_flops, fsla_attention_macs, global_attention_macs, FlopsReport, StageFlops,
};
pub use forward::{
    bla_block_forward, boat_forward, patch_embed, stage_merge, BlockSettings, ForwardOutput, StageShape,
};
pub use params::{BlockParams, ConvParams, LayerNormParams, MlpParams, ModelParams, StageParams};

use serde::{Deserialize, Serialize};

use crate::attention::ClusterFeatures;
use crate::error::{Error, Result};
use crate::grouping::{GroupingConfig, RankingMode};

pub const NUM_STAGES: usize = 4;
pub const IN_CHANNELS: usize = 3;
pub const PATCH_KERNEL: usize = 7;
pub const PATCH_STRIDE: usize = 4;
pub const PATCH_PADDING: usize = 3;
pub const MERGE_KERNEL: usize = 3;

fn default_mlp_ratio() -> usize {
    4
}
fn default_target_cluster_size() -> usize {
    49
}
fn default_overlap() -> usize {
    20
}
fn default_cluster_iters() -> usize {
    5
}
fn default_fsla_every() -> [usize; NUM_STAGES] {
    [1; NUM_STAGES]
}
fn default_layer_norm_eps() -> f64 {
    1e-5
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Stage-1 channel count `C`; stage `i` has `2^(i-1)·C`.
    pub embed_dim: usize,
    pub depths: [usize; NUM_STAGES],
    pub num_heads: [usize; NUM_STAGES],
    pub window_size: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    /// Desired final cluster size; picks the number of levels per stage.
    #[serde(default = "default_target_cluster_size")]
    pub target_cluster_size: usize,
    #[serde(default = "default_overlap")]
    pub overlap: usize,
    pub num_classes: usize,
    #[serde(default = "default_cluster_iters")]
    pub cluster_iters: usize,
    #[serde(default)]
    pub ranking_mode: RankingMode,
    #[serde(default)]
    pub cluster_features: ClusterFeatures,
    /// Per stage: `0` disables feature-space attention, `k` enables it on
    /// every `k`-th block (blocks `k-1, 2k-1, ...`).
    #[serde(default = "default_fsla_every")]
    pub fsla_every: [usize; NUM_STAGES],
    #[serde(default = "default_layer_norm_eps")]
    pub layer_norm_eps: f64,
}

/// Derived geometry of one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub heads: usize,
    pub depth: usize,
    /// Window size after clamping to the feature map.
    pub window: usize,
    /// Clustering levels `K` used by feature-space attention.
    pub levels: u32,
    /// Overlap actually applied (zero when `levels == 0`).
    pub overlap: usize,
    /// Which blocks carry feature-space attention.
    pub fsla_blocks: Vec<bool>,
}

impl StagePlan {
    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn grouping(&self, cfg: &ModelConfig) -> GroupingConfig {
        GroupingConfig {
            levels: self.levels,
            iters: cfg.cluster_iters,
            overlap: self.overlap,
            ranking_mode: cfg.ranking_mode,
        }
    }
}

/// Largest `K` with `2^K | tokens` and `tokens / 2^K >= target`.
pub fn levels_for(tokens: usize, target: usize) -> u32 {
    let mut k = 0;
    while tokens.is_multiple_of(1 << (k + 1)) && tokens >> (k + 1) >= target.max(1) {
        k += 1;
    }
    k
}

impl ModelConfig {
    /// The Tiny-size configuration used for the parameter and FLOPs checks:
    /// Swin-T stage layout with feature-space attention on every second
    /// block of the first three stages.
    pub fn tiny_like() -> Self {
        ModelConfig {
            input_height: 224,
            input_width: 224,
            embed_dim: 96,
            depths: [2, 2, 6, 2],
            num_heads: [3, 6, 12, 24],
            window_size: 7,
            mlp_ratio: 4,
            target_cluster_size: 49,
            overlap: 20,
            num_classes: 1000,
            cluster_iters: 5,
            ranking_mode: RankingMode::Ratio,
            cluster_features: ClusterFeatures::Input,
            fsla_every: [2, 2, 2, 0],
            layer_norm_eps: 1e-5,
        }
    }

    /// The same configuration without feature-space attention.
    pub fn without_fsla(&self) -> Self {
        ModelConfig { fsla_every: [0; NUM_STAGES], ..self.clone() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_plan().map(|_| ())
    }

    /// Geometry of all four stages; fails on any inconsistent setting.
    pub fn stage_plan(&self) -> Result<Vec<StagePlan>> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_height == 0 || self.input_width == 0 {
            return bad("input extent must be positive".into());
        }
        if self.embed_dim == 0 || self.window_size == 0 || self.mlp_ratio == 0 || self.num_classes == 0 {
            return bad("embed_dim, window_size, mlp_ratio and num_classes must be positive".into());
        }
        if self.cluster_iters == 0 {
            return bad("cluster_iters must be at least 1".into());
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return bad(format!("layer_norm_eps must be positive, got {}", self.layer_norm_eps));
        }
        let mut h = (self.input_height - 1) / PATCH_STRIDE + 1;
        let mut w = (self.input_width - 1) / PATCH_STRIDE + 1;
        let mut plan = Vec::with_capacity(NUM_STAGES);
        for i in 0..NUM_STAGES {
            if i > 0 {
                h = h.div_ceil(2);
                w = w.div_ceil(2);
            }
            let channels = self.embed_dim << i;
            let heads = self.num_heads[i];
            if heads == 0 || !channels.is_multiple_of(heads) {
                return bad(format!("stage {}: {channels} channels not divisible by {heads} heads", i + 1));
            }
            let tokens = h * w;
            let levels = levels_for(tokens, self.target_cluster_size);
            let overlap = if levels > 0 { self.overlap } else { 0 };
            let every = self.fsla_every[i];
            let fsla_blocks: Vec<bool> = (0..self.depths[i]).map(|j| every > 0 && (j + 1) % every == 0).collect();
            if fsla_blocks.iter().any(|&b| b) && overlap >= tokens >> levels && levels > 0 {
                return bad(format!(
                    "stage {}: overlap {overlap} must be smaller than cluster size {}",
                    i + 1,
                    tokens >> levels
                ));
            }
            plan.push(StagePlan {
                height: h,
                width: w,
                channels,
                heads,
                depth: self.depths[i],
                window: self.window_size.min(h).min(w),
                levels,
                overlap,
                fsla_blocks,
            });
        }
        Ok(plan)
    }
}
