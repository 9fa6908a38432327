//! Dense kernels with a fixed reduction order.
//!
//! Every reduction accumulates serially, left to right, starting from zero.
//! Bias terms are added after the reduction. Results are therefore
//! bit-identical across runs, platforms and thread counts.

use std::cmp::Ordering;

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Norm floor for cosine similarity; a zero vector has similarity 0 to anything.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// `a · b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    // i-p-j order: each output element still receives its k terms in order p = 0..k.
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out.check_finite("matmul")?;
    Ok(out)
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_nt<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", format!("[{m}, {k}] x [{n}, {k2}]ᵀ")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for (i, arow) in a.rows().enumerate() {
        let orow = out.row_mut(i);
        for (o, brow) in orow.iter_mut().zip(b.rows()) {
            *o = dot(arow, brow);
        }
    }
    out.check_finite("matmul_nt")?;
    Ok(out)
}

/// `x · w + b` for `x: [n, c_in]`, `w: [c_in, c_out]`, `b: [c_out]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut out = matmul(x, w)?;
    if let Some(b) = b {
        let n_out = out.last_dim();
        if b.len() != n_out {
            return Err(Error::shape("linear", format!("bias of {} for {n_out} outputs", b.len())));
        }
        for row in out.data_mut().chunks_exact_mut(n_out) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        out.check_finite("linear")?;
    }
    Ok(out)
}

/// Serial dot product.
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Softmax over one row in place, with max subtraction.
///
/// `-inf` entries are treated as masked and receive zero weight. A row
/// with no finite entry becomes all zeros.
pub(crate) fn softmax_row<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax along the last axis.
///
/// `-inf` entries act as a mask; NaN and `+inf` are rejected.
pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| v.is_nan() || *v == T::infinity()) {
        return Err(Error::NonFinite("softmax_lastdim input"));
    }
    let mut out = x.clone();
    let c = out.last_dim();
    for row in out.data_mut().chunks_exact_mut(c) {
        softmax_row(row);
    }
    Ok(out)
}

/// Layer normalization over the last axis with biased variance.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let c = x.last_dim();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape("layer_norm", format!("{c} channels, gamma {}, beta {}", gamma.len(), beta.len())));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("layer_norm eps must be positive, got {eps}")));
    }
    let eps = T::from_f64(eps);
    let inv_c = T::one() / T::from_usize(c);
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let inv_std = T::one() / (var + eps).sqrt();
        for ((v, &g), &b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (*v - mean) * inv_std * g + b;
        }
    }
    out.check_finite("layer_norm")?;
    Ok(out)
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dSpec { stride, padding, groups }
    }

    /// Output extent for an input extent and kernel size.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

/// Cross-correlation of `x: [c_in, h, w]` with `w: [c_out, c_in / groups, kh, kw]`.
///
/// Each output element sums over input channel, then kernel row, then
/// kernel column, and adds the bias last.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let &[c_in, h, w] = x.shape() else {
        return Err(Error::shape("conv2d", format!("input must be [C, H, W], got {:?}", x.shape())));
    };
    let &[c_out, c_per_group, kh, kw] = weight.shape() else {
        return Err(Error::shape("conv2d", format!("weight must be 4-D, got {:?}", weight.shape())));
    };
    let g = spec.groups;
    if g == 0 || c_in % g != 0 || c_out % g != 0 || c_per_group != c_in / g {
        return Err(Error::shape(
            "conv2d",
            format!("groups {g} incompatible with {c_in} -> {c_out} channels, weight {:?}", weight.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape("conv2d", format!("bias of {} for {c_out} outputs", b.len())));
        }
    }
    let (Some(ho), Some(wo)) = (spec.output_extent(h, kh), spec.output_extent(w, kw)) else {
        return Err(Error::shape(
            "conv2d",
            format!("non-positive output extent for {h}x{w} input, {kh}x{kw} kernel, padding {}", spec.padding),
        ));
    };
    let out_per_group = c_out / g;
    let (xd, wd) = (x.data(), weight.data());
    let pad = spec.padding as isize;
    let mut out = Tensor::zeros(&[c_out, ho, wo]);
    let od = out.data_mut();
    for co in 0..c_out {
        let group = co / out_per_group;
        let w_co = &wd[co * c_per_group * kh * kw..(co + 1) * c_per_group * kh * kw];
        let b = bias.map_or(T::zero(), |b| b.data()[co]);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for cg in 0..c_per_group {
                    let ci = group * c_per_group + cg;
                    let plane = &xd[ci * h * w..(ci + 1) * h * w];
                    let kernel = &w_co[cg * kh * kw..(cg + 1) * kh * kw];
                    for ky in 0..kh {
                        let iy = (oy * spec.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let prow = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for kx in 0..kw {
                            let ix = (ox * spec.stride) as isize + kx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += prow[ix as usize] * kernel[ky * kw + kx];
                        }
                    }
                }
                od[(co * ho + oy) * wo + ox] = acc + b;
            }
        }
    }
    out.check_finite("conv2d")?;
    Ok(out)
}

/// Cosine similarity with norms clamped below by [`COSINE_NORM_FLOOR`].
pub fn cosine_similarity<T: Element>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let floor = T::from_f64(COSINE_NORM_FLOOR);
    let nx = dot(x, x).sqrt().max(floor);
    let ny = dot(y, y).sqrt().max(floor);
    dot(x, y) / (nx * ny)
}

/// Indices ordering `v` descending; equal values keep ascending index order.
pub fn stable_argsort_desc<T: Element>(v: &[T]) -> Result<Vec<usize>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("stable_argsort_desc input"));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // slice::sort_by is stable, so ties stay in index order.
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap_or(Ordering::Equal));
    Ok(idx)
}

/// Rows `idx` of a 2-D tensor, in order.
pub fn gather_rows<T: Element>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let (n, c) = x.dims2()?;
    if idx.is_empty() {
        return Err(Error::shape("gather_rows", "empty index list"));
    }
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), c], data)
}

/// Inverse of [`gather_rows`]: row `k` of `src` lands at row `idx[k]` of an
/// `n_rows`-row output. Rows not named in `idx` are zero; repeated
/// indices are rejected.
pub fn scatter_rows<T: Element>(src: &Tensor<T>, idx: &[usize], n_rows: usize) -> Result<Tensor<T>> {
    let (m, c) = src.dims2()?;
    if m != idx.len() {
        return Err(Error::shape("scatter_rows", format!("{m} rows for {} indices", idx.len())));
    }
    let mut seen = vec![false; n_rows];
    let mut out = Tensor::zeros(&[n_rows, c]);
    for (k, &i) in idx.iter().enumerate() {
        if i >= n_rows {
            return Err(Error::IndexOutOfRange { index: i, len: n_rows });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("scatter_rows: index {i} repeated")));
        }
        out.row_mut(i).copy_from_slice(src.row(k));
    }
    Ok(out)
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    x.map(|v| half * v * (T::one() + (v * inv_sqrt2).erf()))
}

/// `[n, c]` tokens in row-major spatial order to a `[c, h, w]` map.
pub fn tokens_to_map<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c) = x.dims2()?;
    if n != h * w {
        return Err(Error::shape("tokens_to_map", format!("{n} tokens for {h}x{w}")));
    }
    let t = x.transpose()?;
    t.reshape(&[c, h, w])
}

/// `[c, h, w]` map to `[h * w, c]` tokens.
pub fn map_to_tokens<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::shape("map_to_tokens", format!("expected [C, H, W], got {:?}", x.shape())));
    };
    x.clone().reshape(&[c, h * w])?.transpose()
}
