use rayon::prelude::*;

use super::sdpa::scaled_dot_attention;
use super::AttentionParams;
use crate::error::{Error, Result};
use crate::numeric::{linear, Element, Tensor};

/// Window geometry of image-space attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub window_size: usize,
    /// Cyclic shift, `0` or `window_size / 2`.
    pub shift: usize,
}

impl WindowConfig {
    pub fn new(window_size: usize, shift: usize) -> Self {
        WindowConfig { window_size, shift }
    }
}

/// Row of the relative position table for a query at in-window offset
/// `(yi, xi)` attending to a key at `(yj, xj)`.
pub fn relative_position_index(w: usize, (yi, xi): (usize, usize), (yj, xj): (usize, usize)) -> usize {
    let dy = yi + w - 1 - yj;
    let dx = xi + w - 1 - xj;
    dy * (2 * w - 1) + dx
}

/// Region label of a position in the shifted frame. Tokens may only attend
/// to tokens with the same label, which keeps pixels that wrapped around
/// the border from mixing with their new neighbours.
pub fn shift_region(extent: usize, w: usize, shift: usize, pos: usize) -> usize {
    if shift == 0 || pos < extent - w {
        0
    } else if pos < extent - shift {
        1
    } else {
        2
    }
}

/// Shifted-window multi-head attention over `x: [H·W, C]`.
///
/// The map is zero-padded on the right and bottom to a multiple of the
/// window size; padded positions are masked out as keys and cropped from
/// the output.
pub fn isla_swin_forward<T: Element>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    win: WindowConfig,
    spatial: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, c) = x.dims2()?;
    let (h, w) = spatial;
    if n != h * w {
        return Err(Error::shape("isla_swin_forward", format!("{n} tokens for a {h}x{w} map")));
    }
    params.validate(c)?;
    let ws = win.window_size;
    if ws == 0 || ws > h || ws > w {
        return Err(Error::shape("isla_swin_forward", format!("window {ws} larger than {h}x{w} map")));
    }
    if win.shift >= ws {
        return Err(Error::InvalidArgument(format!("shift {} must be smaller than window {ws}", win.shift)));
    }
    if let Some(t) = &params.rel_pos_bias {
        if t.shape()[0] != (2 * ws - 1) * (2 * ws - 1) {
            return Err(Error::shape(
                "isla_swin_forward",
                format!("relative position table {:?} for window {ws}", t.shape()),
            ));
        }
    }

    let (hp, wp) = (h.div_ceil(ws) * ws, w.div_ceil(ws) * ws);
    let s = win.shift;
    let heads = params.num_heads;
    let d = params.head_dim();
    let [q, k, v] = params.project_qkv(x)?;

    // Token feeding each shifted-frame position, or None for padding.
    let source = |yy: usize, xx: usize| -> Option<usize> {
        let (sy, sx) = ((yy + s) % hp, (xx + s) % wp);
        (sy < h && sx < w).then_some(sy * w + sx)
    };

    let windows: Vec<(usize, usize)> = (0..hp / ws).flat_map(|by| (0..wp / ws).map(move |bx| (by, bx))).collect();
    let results = windows
        .par_iter()
        .map(|&(by, bx)| -> Result<Vec<(usize, Vec<T>)>> {
            // (token, in-window coords, region) for real tokens of this window.
            let mut members = Vec::with_capacity(ws * ws);
            for iy in 0..ws {
                for ix in 0..ws {
                    let (yy, xx) = (by * ws + iy, bx * ws + ix);
                    if let Some(tok) = source(yy, xx) {
                        let region = 3 * shift_region(hp, ws, s, yy) + shift_region(wp, ws, s, xx);
                        members.push((tok, (iy, ix), region));
                    }
                }
            }
            let m = members.len();
            let mut rows: Vec<(usize, Vec<T>)> = members.iter().map(|&(tok, _, _)| (tok, vec![T::zero(); c])).collect();
            for head in 0..heads {
                let cols = head * d..(head + 1) * d;
                let pick = |t: &Tensor<T>| Tensor::from_fn(&[m, d], |i| t.row(members[i / d].0)[cols.start + i % d]);
                let bias = Tensor::from_fn(&[m, m], |i| {
                    let (qi, ki) = (&members[i / m], &members[i % m]);
                    if qi.2 != ki.2 {
                        return T::neg_infinity();
                    }
                    params
                        .rel_pos_bias
                        .as_ref()
                        .map_or(T::zero(), |t| t.row(relative_position_index(ws, qi.1, ki.1))[head])
                });
                let out = scaled_dot_attention(&pick(&q), &pick(&k), &pick(&v), Some(&bias))?;
                for (row, o) in rows.iter_mut().zip(out.rows()) {
                    row.1[cols.clone()].copy_from_slice(o);
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut attn = Tensor::zeros(&[n, c]);
    for (tok, row) in results.into_iter().flatten() {
        attn.row_mut(tok).copy_from_slice(&row);
    }
    linear(&attn, &params.w_o, Some(&params.b_o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn setup(h: usize, w: usize, c: usize, heads: usize, ws: usize, seed: u64) -> (Tensor<f64>, AttentionParams<f64>) {
        let mut r = Rng::new(seed);
        let x = Tensor::from_fn(&[h * w, c], |_| r.normal());
        (x, AttentionParams::random(c, heads, false, Some(ws), 0.5, &mut r))
    }

    #[test]
    fn relative_index_is_centered() {
        assert_eq!(relative_position_index(7, (3, 3), (3, 3)), 6 * 13 + 6);
        assert_eq!(relative_position_index(7, (0, 0), (6, 6)), 0);
        assert_eq!(relative_position_index(7, (6, 6), (0, 0)), 13 * 13 - 1);
    }

    #[test]
    fn shape_preserved_for_all_geometries() {
        for &(h, w, ws, s) in &[(8, 8, 4, 0), (8, 8, 4, 2), (7, 7, 7, 0), (10, 9, 4, 2), (5, 13, 3, 1), (14, 14, 7, 3)]
        {
            let (x, p) = setup(h, w, 6, 2, ws, 9);
            let out = isla_swin_forward(&x, &p, WindowConfig::new(ws, s), (h, w)).unwrap();
            assert_eq!(out.shape(), x.shape());
        }
    }

    #[test]
    fn singleton_windows_return_projected_values() {
        let (x, p) = setup(3, 4, 4, 2, 1, 2);
        let out = isla_swin_forward(&x, &p, WindowConfig::new(1, 0), (3, 4)).unwrap();
        let v = linear(&x, &p.w_v, Some(&p.b_v)).unwrap();
        let expected = linear(&v, &p.w_o, Some(&p.b_o)).unwrap();
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_geometry() {
        let (x, p) = setup(4, 4, 4, 2, 5, 1);
        assert!(isla_swin_forward(&x, &p, WindowConfig::new(5, 0), (4, 4)).is_err());
        let (x, p) = setup(4, 4, 4, 2, 2, 1);
        assert!(isla_swin_forward(&x, &p, WindowConfig::new(2, 2), (4, 4)).is_err());
        assert!(isla_swin_forward(&x, &p, WindowConfig::new(2, 0), (2, 4)).is_err());
        assert!(isla_swin_forward(&x, &p, WindowConfig::new(3, 0), (4, 4)).is_err());
    }
}
