use crate::error::{Error, Result};
use crate::numeric::ops::softmax_row;
use crate::numeric::{matmul, matmul_nt, Element, Tensor};

fn check_qkv<T: Element>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (mq, d) = q.dims2()?;
    let (mk, dk) = k.dims2()?;
    let (mv, _) = v.dims2()?;
    if d != dk || mk != mv {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    Ok((mq, mk, d))
}

/// `softmax(q kᵀ / √d + bias)`, row-wise.
///
/// `bias` entries of `-inf` mask the corresponding key for that query.
pub fn attention_weights<T: Element>(q: &Tensor<T>, k: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (mq, d) = q.dims2()?;
    let (mk, _) = k.dims2()?;
    let mut scores = matmul_nt(q, k)?;
    let scale = T::one() / T::from_usize(d).sqrt();
    if let Some(b) = bias {
        if b.shape() != [mq, mk] {
            return Err(Error::shape("scaled_dot_attention", format!("bias {:?} for {mq}x{mk} scores", b.shape())));
        }
        for (s, &bv) in scores.data_mut().iter_mut().zip(b.data()) {
            *s = *s * scale + bv;
        }
    } else {
        scores.data_mut().iter_mut().for_each(|s| *s *= scale);
    }
    for row in scores.data_mut().chunks_exact_mut(mk) {
        softmax_row(row);
    }
    scores.check_finite("attention_weights")?;
    Ok(scores)
}

/// `softmax(q kᵀ / √d + bias) · v`.
pub fn scaled_dot_attention<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_qkv(q, k, v)?;
    matmul(&attention_weights(q, k, bias)?, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrads<T> {
    pub dq: Tensor<T>,
    pub dk: Tensor<T>,
    pub dv: Tensor<T>,
}

/// Gradients of `sum(upstream ⊙ scaled_dot_attention(q, k, v))` with
/// respect to `q`, `k` and `v` (no bias).
pub fn attention_backward<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let (mq, _, d) = check_qkv(q, k, v)?;
    if upstream.shape() != [mq, v.shape()[1]] {
        return Err(Error::shape(
            "attention_backward",
            format!("upstream {:?}, output is [{mq}, {}]", upstream.shape(), v.shape()[1]),
        ));
    }
    let p = attention_weights(q, k, None)?;
    let dv = matmul(&p.transpose()?, upstream)?;
    let dp = matmul_nt(upstream, v)?;
    // dS = P ⊙ (dP - rowsum(P ⊙ dP))
    let mk = p.last_dim();
    let mut ds = dp;
    for (ds_row, p_row) in ds.data_mut().chunks_exact_mut(mk).zip(p.rows()) {
        let mut inner = T::zero();
        for (&g, &pv) in ds_row.iter().zip(p_row) {
            inner += g * pv;
        }
        for (g, &pv) in ds_row.iter_mut().zip(p_row) {
            *g = pv * (*g - inner);
        }
    }
    let scale = T::one() / T::from_usize(d).sqrt();
    let dq = matmul(&ds, k)?.map(|g| g * scale);
    let dk = matmul(&ds.transpose()?, q)?.map(|g| g * scale);
    Ok(AttentionGrads { dq, dk, dv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    fn rand(m: usize, d: usize, r: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(&[m, d], |_| r.normal())
    }

    #[test]
    fn single_token_returns_value() {
        let q = Tensor::new(vec![1, 2], vec![0.3, -2.0]).unwrap();
        let k = Tensor::new(vec![1, 2], vec![5.0, 1.0]).unwrap();
        let v = Tensor::new(vec![1, 2], vec![7.0, -8.0]).unwrap();
        assert_eq!(scaled_dot_attention(&q, &k, &v, None).unwrap(), v);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut r = Rng::new(1);
        let q = rand(3, 4, &mut r);
        let k = Tensor::from_fn(&[3, 4], |i| (i % 4) as f64);
        let v = rand(3, 2, &mut r);
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        for c in 0..2 {
            let mean = (0..3).map(|i| v.row(i)[c]).sum::<f64>() / 3.0;
            for i in 0..3 {
                assert!((out.row(i)[c] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_token_closed_form() {
        let q = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let k = Tensor::new(vec![2, 1], vec![10.0, -10.0]).unwrap();
        let v = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        // weight on key 0 = sigmoid(20)
        let expected = 1.0 / (1.0 + (-20.0f64).exp());
        assert!((out.data()[0] - expected).abs() < 1e-15);
        assert!((out.data()[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 4]);
        assert!(scaled_dot_attention(&a, &b, &a, None).is_err());
        assert!(attention_backward(&a, &a, &a, &b).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut r = Rng::new(2);
        let (q, k, v) = (rand(4, 3, &mut r), rand(4, 3, &mut r), rand(4, 3, &mut r));
        let g = attention_backward(&q, &k, &v, &Tensor::zeros(&[4, 3])).unwrap();
        for t in [&g.dq, &g.dk, &g.dv] {
            assert!(t.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn single_token_grads() {
        let mut r = Rng::new(3);
        let (q, k, v, up) = (rand(1, 3, &mut r), rand(1, 3, &mut r), rand(1, 3, &mut r), rand(1, 3, &mut r));
        let g = attention_backward(&q, &k, &v, &up).unwrap();
        assert_eq!(g.dv, up);
        assert!(g.dq.data().iter().chain(g.dk.data()).all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn weights_rows_sum_to_one(m in 1usize..10, d in 1usize..6, seed in any::<u64>()) {
            let mut r = Rng::new(seed);
            let q = rand(m, d, &mut r).cast::<f32>();
            let k = rand(m, d, &mut r).cast::<f32>();
            let p = attention_weights(&q, &k, None).unwrap();
            for row in p.rows() {
                prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
