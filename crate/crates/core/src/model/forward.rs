use super::params::{BlockParams, ConvParams, LayerNormParams, MlpParams, ModelParams};
use super::{ModelConfig, IN_CHANNELS, PATCH_PADDING, PATCH_STRIDE};
use crate::attention::{fsla_forward_with, isla_swin_forward, ClusterFeatures, WindowConfig};
use crate::error::{Error, Result};
use crate::grouping::GroupingConfig;
use crate::numeric::{conv2d, gelu, layer_norm, linear, map_to_tokens, tokens_to_map, Conv2dSpec, Element, Tensor};

/// Per-stage settings shared by every block of the stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSettings {
    pub window: usize,
    pub grouping: GroupingConfig,
    pub features: ClusterFeatures,
    pub eps: f64,
}

/// Shape of the feature map entering a stage's blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// `[num_classes]`.
    pub logits: Tensor<T>,
    pub stages: Vec<StageShape>,
}

fn norm<T: Element>(x: &Tensor<T>, p: &LayerNormParams<T>, eps: f64) -> Result<Tensor<T>> {
    layer_norm(x, &p.gamma, &p.beta, eps)
}

fn mlp<T: Element>(x: &Tensor<T>, p: &MlpParams<T>) -> Result<Tensor<T>> {
    let hidden = gelu(&linear(x, &p.w1, Some(&p.b1))?);
    linear(&hidden, &p.w2, Some(&p.b2))
}

/// 7×7 stride-4 convolution of a `[3, H, W]` image into `[H/4 · W/4, C]`
/// tokens. Returns the tokens and their spatial extent.
pub fn patch_embed<T: Element>(img: &Tensor<T>, p: &ConvParams<T>) -> Result<(Tensor<T>, (usize, usize))> {
    if img.ndim() != 3 || img.shape()[0] != IN_CHANNELS {
        return Err(Error::shape("patch_embed", format!("expected a [3, H, W] image, got {:?}", img.shape())));
    }
    let map = conv2d(img, &p.weight, Some(&p.bias), Conv2dSpec::new(PATCH_STRIDE, PATCH_PADDING, 1))?;
    let spatial = (map.shape()[1], map.shape()[2]);
    Ok((map_to_tokens(&map)?, spatial))
}

/// 3×3 stride-2 convolution over the token map; halves each spatial extent
/// (rounding up) and maps the channels to the conv's output width.
pub fn stage_merge<T: Element>(
    x: &Tensor<T>,
    spatial: (usize, usize),
    p: &ConvParams<T>,
) -> Result<(Tensor<T>, (usize, usize))> {
    let map = conv2d(&tokens_to_map(x, spatial.0, spatial.1)?, &p.weight, Some(&p.bias), Conv2dSpec::new(2, 1, 1))?;
    let out_spatial = (map.shape()[1], map.shape()[2]);
    Ok((map_to_tokens(&map)?, out_spatial))
}

/// One bilateral local attention block:
///
/// ```text
/// t1  = x  + ISLA(LN(x))
/// t2  = t1 + FSLA(LN(t1))      (skipped when the block has no FSLA)
/// out = t2 + MLP(LN(t2))
/// ```
///
/// Odd blocks (`shifted`) use a half-window cyclic shift when the map is
/// larger than one window.
pub fn bla_block_forward<T: Element>(
    x: &Tensor<T>,
    p: &BlockParams<T>,
    spatial: (usize, usize),
    shifted: bool,
    s: &BlockSettings,
) -> Result<Tensor<T>> {
    let (n, _) = x.dims2()?;
    if n != spatial.0 * spatial.1 {
        return Err(Error::shape("bla_block_forward", format!("{n} tokens for a {}x{} map", spatial.0, spatial.1)));
    }
    let shift = if shifted && spatial.0.min(spatial.1) > s.window { s.window / 2 } else { 0 };
    let win = WindowConfig::new(s.window, shift);
    let t1 = x.add(&isla_swin_forward(&norm(x, &p.norm1, s.eps)?, &p.isla, win, spatial)?)?;
    let t2 = match (&p.norm2, &p.fsla) {
        (Some(n2), Some(f)) => {
            let local = fsla_forward_with(&norm(&t1, n2, s.eps)?, f, &s.grouping, spatial, s.features)?;
            t1.add(&local.output)?
        }
        (None, None) => t1,
        _ => return Err(Error::Config("block has only one of norm2 / fsla".into())),
    };
    t2.add(&mlp(&norm(&t2, &p.norm3, s.eps)?, &p.mlp)?)
}

/// Full forward pass of a `[3, H, W]` image to `[num_classes]` logits.
pub fn boat_forward<T: Element>(
    img: &Tensor<T>,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
) -> Result<ForwardOutput<T>> {
    let plan = cfg.stage_plan()?;
    if img.shape() != [IN_CHANNELS, cfg.input_height, cfg.input_width] {
        return Err(Error::shape(
            "boat_forward",
            format!("input {:?}, config expects [3, {}, {}]", img.shape(), cfg.input_height, cfg.input_width),
        ));
    }
    if params.stages.len() != plan.len() {
        return Err(Error::Config(format!("params have {} stages", params.stages.len())));
    }

    let (mut x, mut spatial) = patch_embed(img, &params.patch_embed)?;
    let mut stages = Vec::with_capacity(plan.len());
    for (sp, stage) in plan.iter().zip(&params.stages) {
        if let Some(m) = &stage.merge {
            (x, spatial) = stage_merge(&x, spatial, m)?;
        }
        if spatial != (sp.height, sp.width) || x.last_dim() != sp.channels {
            return Err(Error::Config(format!(
                "stage map {}x{}x{} does not match config {}x{}x{}",
                spatial.0,
                spatial.1,
                x.last_dim(),
                sp.height,
                sp.width,
                sp.channels
            )));
        }
        if stage.blocks.len() != sp.depth
            || stage.blocks.iter().zip(&sp.fsla_blocks).any(|(b, &f)| b.fsla.is_some() != f)
        {
            return Err(Error::Config("block layout of params does not match config".into()));
        }
        stages.push(StageShape { height: spatial.0, width: spatial.1, tokens: sp.tokens(), channels: sp.channels });
        let settings = BlockSettings {
            window: sp.window,
            grouping: sp.grouping(cfg),
            features: cfg.cluster_features,
            eps: cfg.layer_norm_eps,
        };
        for (j, block) in stage.blocks.iter().enumerate() {
            x = bla_block_forward(&x, block, spatial, j % 2 == 1, &settings)?;
        }
    }

    let x = norm(&x, &params.norm, cfg.layer_norm_eps)?;
    let (n, c) = x.dims2()?;
    let mut pooled = vec![T::zero(); c];
    for row in x.rows() {
        for (p, &v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    let inv_n = T::one() / T::from_usize(n);
    let pooled = Tensor::new(vec![1, c], pooled.into_iter().map(|v| v * inv_n).collect())?;
    let logits = linear(&pooled, &params.head_w, Some(&params.head_b))?.reshape(&[cfg.num_classes])?;
    logits.check_finite("boat_forward")?;
    Ok(ForwardOutput { logits, stages })
}
