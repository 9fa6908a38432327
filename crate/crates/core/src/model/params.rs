use super::{ModelConfig, IN_CHANNELS, MERGE_KERNEL, PATCH_KERNEL};
use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::numeric::{Element, Rng, Tensor};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> LayerNormParams<T> {
    fn new(dim: usize) -> Self {
        LayerNormParams { gamma: Tensor::full(&[dim], T::one()), beta: Tensor::zeros(&[dim]) }
    }
}

/// Two-layer perceptron `C → rC → C`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    /// `[C_out, C_in, k, k]`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> ConvParams<T> {
    fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        ConvParams { weight: Tensor::zeros(&[c_out, c_in, k, k]), bias: Tensor::zeros(&[c_out]) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub norm1: LayerNormParams<T>,
    pub isla: AttentionParams<T>,
    pub norm2: Option<LayerNormParams<T>>,
    pub fsla: Option<AttentionParams<T>>,
    pub norm3: LayerNormParams<T>,
    pub mlp: MlpParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<T> {
    /// Patch merge from the previous stage; absent on stage 1.
    pub merge: Option<ConvParams<T>>,
    pub blocks: Vec<BlockParams<T>>,
}

/// Every learnable tensor of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub patch_embed: ConvParams<T>,
    pub stages: Vec<StageParams<T>>,
    pub norm: LayerNormParams<T>,
    /// `[C_4, num_classes]`.
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

const ATTENTION_NAMES: [&str; 11] = [
    "q.weight",
    "q.bias",
    "k.weight",
    "k.bias",
    "v.weight",
    "v.bias",
    "o.weight",
    "o.bias",
    "lepe.weight",
    "lepe.bias",
    "rel_pos_table",
];

fn attention_named<'a, T: Element>(prefix: &str, p: &'a AttentionParams<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
    let names = ATTENTION_NAMES.iter().filter(|n| match **n {
        "lepe.weight" | "lepe.bias" => p.lepe.is_some(),
        "rel_pos_table" => p.rel_pos_bias.is_some(),
        _ => true,
    });
    out.extend(names.zip(p.tensors()).map(|(n, t)| (format!("{prefix}.{n}"), t)));
}

impl<T: Element> ModelParams<T> {
    /// Parameters shaped for `cfg`: LayerNorm scales one, everything else zero.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let plan = cfg.stage_plan()?;
        let c = cfg.embed_dim;
        let mut stages = Vec::with_capacity(plan.len());
        for (i, sp) in plan.iter().enumerate() {
            let ch = sp.channels;
            let hidden = ch * cfg.mlp_ratio;
            let blocks = sp
                .fsla_blocks
                .iter()
                .map(|&with_fsla| BlockParams {
                    norm1: LayerNormParams::new(ch),
                    isla: AttentionParams::zeros(ch, sp.heads, false, Some(sp.window)),
                    norm2: with_fsla.then(|| LayerNormParams::new(ch)),
                    fsla: with_fsla.then(|| AttentionParams::zeros(ch, sp.heads, true, None)),
                    norm3: LayerNormParams::new(ch),
                    mlp: MlpParams {
                        w1: Tensor::zeros(&[ch, hidden]),
                        b1: Tensor::zeros(&[hidden]),
                        w2: Tensor::zeros(&[hidden, ch]),
                        b2: Tensor::zeros(&[ch]),
                    },
                })
                .collect();
            stages.push(StageParams { merge: (i > 0).then(|| ConvParams::zeros(ch, ch / 2, MERGE_KERNEL)), blocks });
        }
        let last = plan[plan.len() - 1].channels;
        Ok(ModelParams {
            patch_embed: ConvParams::zeros(c, IN_CHANNELS, PATCH_KERNEL),
            stages,
            norm: LayerNormParams::new(last),
            head_w: Tensor::zeros(&[last, cfg.num_classes]),
            head_b: Tensor::zeros(&[cfg.num_classes]),
        })
    }

    /// Standard initialization: weights and position tables drawn from a
    /// normal truncated at ±2σ with σ = 0.02, biases and LayerNorm shifts
    /// zero, LayerNorm scales one. Each tensor draws from its own stream
    /// keyed by its name, so adding a tensor never perturbs the others.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        for (name, t) in p.named_tensors_mut() {
            if name.ends_with(".weight") || name.ends_with("rel_pos_table") {
                let mut rng = Rng::derive(seed, &name);
                t.data_mut().iter_mut().for_each(|v| *v = T::from_f64(rng.trunc_normal(INIT_STD)));
            }
        }
        Ok(p)
    }

    /// Tensors with their canonical names, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), &self.patch_embed.weight),
            ("patch_embed.bias".to_string(), &self.patch_embed.bias),
        ];
        for (i, stage) in self.stages.iter().enumerate() {
            if let Some(m) = &stage.merge {
                out.push((format!("stages.{i}.merge.weight"), &m.weight));
                out.push((format!("stages.{i}.merge.bias"), &m.bias));
            }
            for (j, b) in stage.blocks.iter().enumerate() {
                let pre = format!("stages.{i}.blocks.{j}");
                out.push((format!("{pre}.norm1.gamma"), &b.norm1.gamma));
                out.push((format!("{pre}.norm1.beta"), &b.norm1.beta));
                attention_named(&format!("{pre}.isla"), &b.isla, &mut out);
                if let (Some(n), Some(f)) = (&b.norm2, &b.fsla) {
                    out.push((format!("{pre}.norm2.gamma"), &n.gamma));
                    out.push((format!("{pre}.norm2.beta"), &n.beta));
                    attention_named(&format!("{pre}.fsla"), f, &mut out);
                }
                out.push((format!("{pre}.norm3.gamma"), &b.norm3.gamma));
                out.push((format!("{pre}.norm3.beta"), &b.norm3.beta));
                out.push((format!("{pre}.mlp.fc1.weight"), &b.mlp.w1));
                out.push((format!("{pre}.mlp.fc1.bias"), &b.mlp.b1));
                out.push((format!("{pre}.mlp.fc2.weight"), &b.mlp.w2));
                out.push((format!("{pre}.mlp.fc2.bias"), &b.mlp.b2));
            }
        }
        out.push(("norm.gamma".to_string(), &self.norm.gamma));
        out.push(("norm.beta".to_string(), &self.norm.beta));
        out.push(("head.weight".to_string(), &self.head_w));
        out.push(("head.bias".to_string(), &self.head_b));
        out
    }

    /// Same order as [`Self::named_tensors`].
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut tensors: Vec<&mut Tensor<T>> = vec![&mut self.patch_embed.weight, &mut self.patch_embed.bias];
        for stage in &mut self.stages {
            if let Some(m) = &mut stage.merge {
                tensors.push(&mut m.weight);
                tensors.push(&mut m.bias);
            }
            for b in &mut stage.blocks {
                tensors.push(&mut b.norm1.gamma);
                tensors.push(&mut b.norm1.beta);
                tensors.extend(b.isla.tensors_mut());
                if let (Some(n), Some(f)) = (&mut b.norm2, &mut b.fsla) {
                    tensors.push(&mut n.gamma);
                    tensors.push(&mut n.beta);
                    tensors.extend(f.tensors_mut());
                }
                tensors.push(&mut b.norm3.gamma);
                tensors.push(&mut b.norm3.beta);
                tensors.extend([&mut b.mlp.w1, &mut b.mlp.b1, &mut b.mlp.w2, &mut b.mlp.b2]);
            }
        }
        tensors.extend([&mut self.norm.gamma, &mut self.norm.beta, &mut self.head_w, &mut self.head_b]);
        names.into_iter().zip(tensors).collect()
    }

    /// Number of scalars actually stored.
    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All tensors concatenated in canonical order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, t) in self.named_tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`Self::to_flat`]; the length must match `cfg` exactly and
    /// every value must be finite.
    pub fn from_flat(cfg: &ModelConfig, flat: &[T]) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let expected = p.num_scalars();
        if flat.len() != expected {
            return Err(Error::Config(format!("weights hold {} scalars, config needs {expected}", flat.len())));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        let mut offset = 0;
        for (_, t) in p.named_tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(p)
    }

    pub fn cast<U: Element>(&self, cfg: &ModelConfig) -> Result<ModelParams<U>> {
        let flat: Vec<U> = self.to_flat().into_iter().map(|v| U::from_f64(v.as_f64())).collect();
        ModelParams::from_flat(cfg, &flat)
    }
}
