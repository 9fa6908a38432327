use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sdpa::scaled_dot_attention;
use super::AttentionParams;
use crate::error::{Error, Result};
use crate::grouping::{balanced_hierarchical_cluster, ClusterAssignment, GroupingConfig};
use crate::numeric::{conv2d, gather_rows, linear, map_to_tokens, tokens_to_map, Conv2dSpec, Element, Tensor};

/// Which per-head features drive the clustering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterFeatures {
    /// The head's channel block of the (normalized) input tokens.
    #[default]
    Input,
    /// The head's slice of the projected keys.
    Keys,
}

#[derive(Clone, Debug)]
pub struct FslaOutput<T> {
    pub output: Tensor<T>,
    /// Cluster assignment computed for each head.
    pub assignments: Vec<ClusterAssignment<T>>,
}

/// Feature-space local attention over `x: [H·W, C]`.
pub fn fsla_forward<T: Element>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    cfg: &GroupingConfig,
    spatial: (usize, usize),
) -> Result<Tensor<T>> {
    Ok(fsla_forward_with(x, params, cfg, spatial, ClusterFeatures::Input)?.output)
}

/// [`fsla_forward`] with a choice of clustering features, also returning
/// each head's cluster assignment.
///
/// Each head clusters independently, attends within every final cluster,
/// and tokens shared by two sibling clusters take the mean of their two
/// outputs. LePE over the spatial value map is added before the output
/// projection.
pub fn fsla_forward_with<T: Element>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    cfg: &GroupingConfig,
    spatial: (usize, usize),
    features: ClusterFeatures,
) -> Result<FslaOutput<T>> {
    let (n, c) = x.dims2()?;
    let (h, w) = spatial;
    if n != h * w {
        return Err(Error::shape("fsla_forward", format!("{n} tokens for a {h}x{w} map")));
    }
    params.validate(c)?;
    cfg.validate(n)?;
    let lepe = params
        .lepe
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("feature-space attention needs LePE weights".into()))?;

    let [q, k, v] = params.project_qkv(x)?;
    let d = params.head_dim();

    let heads = (0..params.num_heads)
        .into_par_iter()
        .map(|head| -> Result<(Tensor<T>, ClusterAssignment<T>)> {
            let cols = head * d..(head + 1) * d;
            let feats = match features {
                ClusterFeatures::Input => x.slice_cols(cols.start, cols.end)?,
                ClusterFeatures::Keys => k.slice_cols(cols.start, cols.end)?,
            };
            let assignment = balanced_hierarchical_cluster(&feats, cfg)?;
            let (qh, kh, vh) = (
                q.slice_cols(cols.start, cols.end)?,
                k.slice_cols(cols.start, cols.end)?,
                v.slice_cols(cols.start, cols.end)?,
            );
            let mut sum = Tensor::zeros(&[n, d]);
            let mut count = vec![0usize; n];
            for cluster in &assignment.clusters {
                let out = scaled_dot_attention(
                    &gather_rows(&qh, cluster)?,
                    &gather_rows(&kh, cluster)?,
                    &gather_rows(&vh, cluster)?,
                    None,
                )?;
                for (row, &tok) in out.rows().zip(cluster) {
                    for (s, &o) in sum.row_mut(tok).iter_mut().zip(row) {
                        *s += o;
                    }
                    count[tok] += 1;
                }
            }
            for (tok, &cnt) in count.iter().enumerate() {
                if cnt > 1 {
                    let denom = T::from_usize(cnt);
                    sum.row_mut(tok).iter_mut().for_each(|s| *s /= denom);
                }
            }
            Ok((sum, assignment))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut attn = Tensor::zeros(&[n, c]);
    for (head, (out, _)) in heads.iter().enumerate() {
        for (tok, row) in out.rows().enumerate() {
            attn.row_mut(tok)[head * d..(head + 1) * d].copy_from_slice(row);
        }
    }

    let pos = conv2d(&tokens_to_map(&v, h, w)?, &lepe.weight, Some(&lepe.bias), Conv2dSpec::new(1, 1, c))?;
    let attn = attn.add(&map_to_tokens(&pos)?)?;
    let output = linear(&attn, &params.w_o, Some(&params.b_o))?;
    Ok(FslaOutput { output, assignments: heads.into_iter().map(|(_, a)| a).collect() })
}
