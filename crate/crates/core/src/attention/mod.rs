//! Self-attention restricted to feature-space clusters (FSLA) and to
//! spatial windows (ISLA), plus the analytic backward pass of the shared
//! scaled dot-product kernel.
//!
//! Projections follow the `x · W + b` convention with `W: [C_in, C_out]`.

mod fsla;
mod isla;
mod sdpa;

pub use fsla::{fsla_forward, fsla_forward_with, ClusterFeatures, FslaOutput};
pub use isla::{isla_swin_forward, relative_position_index, shift_region, WindowConfig};
pub use sdpa::{attention_backward, attention_weights, scaled_dot_attention, AttentionGrads};

use crate::error::{Error, Result};
use crate::numeric::{Element, Rng, Tensor};

/// Depthwise 3×3 convolution applied to the value map.
#[derive(Clone, Debug, PartialEq)]
pub struct Lepe<T> {
    /// `[C, 1, 3, 3]`.
    pub weight: Tensor<T>,
    /// `[C]`.
    pub bias: Tensor<T>,
}

/// Weights of one multi-head attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub num_heads: usize,
    pub w_q: Tensor<T>,
    pub b_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub b_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub b_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub b_o: Tensor<T>,
    /// Locally-enhanced positional encoding (feature-space attention only).
    pub lepe: Option<Lepe<T>>,
    /// Relative position bias table `[(2w - 1)^2, heads]` (window attention only).
    pub rel_pos_bias: Option<Tensor<T>>,
}

impl<T: Element> AttentionParams<T> {
    /// All-zero parameters. `window` sizes the relative position table.
    pub fn zeros(dim: usize, num_heads: usize, with_lepe: bool, window: Option<usize>) -> Self {
        let mat = || Tensor::zeros(&[dim, dim]);
        let vec = || Tensor::zeros(&[dim]);
        AttentionParams {
            num_heads,
            w_q: mat(),
            b_q: vec(),
            w_k: mat(),
            b_k: vec(),
            w_v: mat(),
            b_v: vec(),
            w_o: mat(),
            b_o: vec(),
            lepe: with_lepe.then(|| Lepe { weight: Tensor::zeros(&[dim, 1, 3, 3]), bias: vec() }),
            rel_pos_bias: window.map(|w| Tensor::zeros(&[(2 * w - 1) * (2 * w - 1), num_heads])),
        }
    }

    /// Every tensor filled with `N(0, std^2)` samples, biases included.
    pub fn random(
        dim: usize,
        num_heads: usize,
        with_lepe: bool,
        window: Option<usize>,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut p = Self::zeros(dim, num_heads, with_lepe, window);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::from_f64(rng.normal() * std));
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.b_q.len()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.num_heads
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.w_q, &self.b_q, &self.w_k, &self.b_k, &self.w_v, &self.b_v, &self.w_o, &self.b_o];
        if let Some(l) = &self.lepe {
            v.extend([&l.weight, &l.bias]);
        }
        v.extend(self.rel_pos_bias.as_ref());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
        ];
        if let Some(l) = &mut self.lepe {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v.extend(self.rel_pos_bias.as_mut());
        v
    }

    pub fn cast<U: Element>(&self) -> AttentionParams<U> {
        AttentionParams {
            num_heads: self.num_heads,
            w_q: self.w_q.cast(),
            b_q: self.b_q.cast(),
            w_k: self.w_k.cast(),
            b_k: self.b_k.cast(),
            w_v: self.w_v.cast(),
            b_v: self.b_v.cast(),
            w_o: self.w_o.cast(),
            b_o: self.b_o.cast(),
            lepe: self.lepe.as_ref().map(|l| Lepe { weight: l.weight.cast(), bias: l.bias.cast() }),
            rel_pos_bias: self.rel_pos_bias.as_ref().map(Tensor::cast),
        }
    }

    /// Checks internal consistency and that the layer accepts `dim` channels.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let c = self.dim();
        if c != dim {
            return Err(Error::shape("attention", format!("params for {c} channels, input has {dim}")));
        }
        if self.num_heads == 0 || !c.is_multiple_of(self.num_heads) {
            return Err(Error::shape("attention", format!("{c} channels not divisible by {} heads", self.num_heads)));
        }
        for w in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            if w.shape() != [c, c] {
                return Err(Error::shape("attention", format!("projection {:?}, expected [{c}, {c}]", w.shape())));
            }
        }
        for b in [&self.b_q, &self.b_k, &self.b_v, &self.b_o] {
            if b.shape() != [c] {
                return Err(Error::shape("attention", format!("bias {:?}, expected [{c}]", b.shape())));
            }
        }
        if let Some(l) = &self.lepe {
            if l.weight.shape() != [c, 1, 3, 3] || l.bias.shape() != [c] {
                return Err(Error::shape(
                    "attention",
                    format!("LePE weight {:?} / bias {:?} for {c} channels", l.weight.shape(), l.bias.shape()),
                ));
            }
        }
        if let Some(t) = &self.rel_pos_bias {
            if t.ndim() != 2 || t.shape()[1] != self.num_heads {
                return Err(Error::shape("attention", format!("relative position table {:?}", t.shape())));
            }
        }
        Ok(())
    }

    pub(crate) fn project_qkv(&self, x: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
        use crate::numeric::linear;
        Ok([
            linear(x, &self.w_q, Some(&self.b_q))?,
            linear(x, &self.w_k, Some(&self.b_k))?,
            linear(x, &self.w_v, Some(&self.b_v))?,
        ])
    }
}
