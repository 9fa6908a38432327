//! Minimal deterministic dense-tensor kernels.

pub mod ops;
pub mod rng;
pub mod tensor;

pub use ops::{
    conv2d, cosine_similarity, gather_rows, gelu, layer_norm, linear, map_to_tokens, matmul, matmul_nt, scatter_rows,
    softmax_lastdim, stable_argsort_desc, tokens_to_map, Conv2dSpec,
};
pub use rng::Rng;
pub use tensor::{DType, Element, Tensor};
