//! Forward and backward kernels shared by the full-sequence pass and the
//! incremental decoder.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;

use super::Scalar;
use crate::rng::Rng;

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

pub(crate) fn linear<T: Scalar>(
    x: &ArrayView2<T>,
    w: &ArrayView2<T>,
    b: &ArrayView1<T>,
) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn linear_backward<T: Scalar>(
    x: &ArrayView2<T>,
    w: &ArrayView2<T>,
    dy: &ArrayView2<T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    (dy.dot(&w.t()), x.t().dot(dy), dy.sum_axis(Axis(0)))
}

pub(crate) struct LnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

pub(crate) fn layer_norm<T: Scalar>(
    x: &ArrayView2<T>,
    g: &ArrayView1<T>,
    b: &ArrayView1<T>,
) -> (Array2<T>, LnCache<T>) {
    let d = x.ncols();
    let inv_d = c::<T>(1.0 / d as f64);
    let eps = c::<T>(LN_EPS);
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(T::zero(), |a, &v| a + v * v) * inv_d;
        let s = T::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * s);
        *is = s;
    }
    let mut y = &xhat * g;
    y += b;
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dg, db)`.
pub(crate) fn layer_norm_backward<T: Scalar>(
    cache: &LnCache<T>,
    g: &ArrayView1<T>,
    dy: &ArrayView2<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let d = dy.ncols();
    let inv_d = c::<T>(1.0 / d as f64);
    let dg = (dy * &cache.xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let mut dx = dy * g;
    for ((mut dxr, xh), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_dxh = dxr.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
        let mean_dxh_xh = dxr
            .iter()
            .zip(xh.iter())
            .fold(T::zero(), |a, (&u, &v)| a + u * v)
            * inv_d;
        Zip::from(&mut dxr)
            .and(&xh)
            .for_each(|v, &h| *v = s * (*v - mean_dxh - h * mean_dxh_xh));
    }
    (dx, dg, db)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let (k, cc, half) = (c::<T>(GELU_K), c::<T>(GELU_C), c::<T>(0.5));
    x.mapv(|v| half * v * (T::one() + (k * (v + cc * v * v * v)).tanh()))
}

pub(crate) fn gelu_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let (k, cc, half, three) = (c::<T>(GELU_K), c::<T>(GELU_C), c::<T>(0.5), c::<T>(3.0));
    let mut out = dy.clone();
    Zip::from(&mut out).and(x).for_each(|d, &v| {
        let t = (k * (v + cc * v * v * v)).tanh();
        let grad = half * (T::one() + t)
            + half * v * (T::one() - t * t) * k * (T::one() + three * cc * v * v);
        *d *= grad;
    });
    out
}

/// Inverted dropout mask (kept entries scaled by `1/(1-p)`), or `None` when inactive.
pub(crate) fn dropout_mask<T: Scalar>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: Option<&mut Rng>,
) -> Option<Array2<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = c::<T>(1.0 / (1.0 - p));
    Some(Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    }))
}

pub(crate) fn apply_mask<T: Scalar>(x: &mut Array2<T>, mask: &Option<Array2<T>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Multi-head scaled dot-product attention over a padded batch.
///
/// `q` has `batch * tq` rows, `k`/`v` have `batch * tk` rows; only the first
/// `key_len[b]` keys of item `b` are visible, and with `causal` query `i`
/// additionally sees keys `j <= i`. Returns the concatenated head outputs
/// and the per-(item, head) probability matrices of shape `tq x key_len[b]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention<T: Scalar>(
    q: &ArrayView2<T>,
    k: &ArrayView2<T>,
    v: &ArrayView2<T>,
    tq: usize,
    tk: usize,
    key_len: &[usize],
    heads: usize,
    causal: bool,
) -> (Array2<T>, Vec<Array2<T>>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    let mut ctx = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(key_len.len() * heads);
    for (b, &len) in key_len.iter().enumerate() {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qb = q.slice(s![b * tq..(b + 1) * tq, cols.clone()]);
            let kb = k.slice(s![b * tk..b * tk + len, cols.clone()]);
            let vb = v.slice(s![b * tk..b * tk + len, cols.clone()]);
            let mut p = qb.dot(&kb.t());
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                let visible = if causal { (i + 1).min(len) } else { len };
                softmax_prefix(row.as_slice_mut().expect("contiguous"), visible, scale);
            }
            let out = p.dot(&vb);
            ctx.slice_mut(s![b * tq..(b + 1) * tq, cols]).assign(&out);
            probs.push(p);
        }
    }
    (ctx, probs)
}

/// Scaled softmax over `row[..visible]`; the rest is zeroed.
pub(crate) fn softmax_prefix<T: Scalar>(row: &mut [T], visible: usize, scale: T) {
    let (head, tail) = row.split_at_mut(visible);
    let m = head.iter().fold(
        T::neg_infinity(),
        |a, &v| if v * scale > a { v * scale } else { a },
    );
    let mut z = T::zero();
    for v in head.iter_mut() {
        *v = (*v * scale - m).exp();
        z += *v;
    }
    for v in head.iter_mut() {
        *v /= z;
    }
    tail.fill(T::zero());
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    q: &ArrayView2<T>,
    k: &ArrayView2<T>,
    v: &ArrayView2<T>,
    probs: &[Array2<T>],
    dctx: &ArrayView2<T>,
    tq: usize,
    tk: usize,
    key_len: &[usize],
    heads: usize,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (b, &len) in key_len.iter().enumerate() {
        for h in 0..heads {
            let p = &probs[b * heads + h];
            let cols = h * dh..(h + 1) * dh;
            let qrows = b * tq..(b + 1) * tq;
            let krows = b * tk..b * tk + len;
            let qb = q.slice(s![qrows.clone(), cols.clone()]);
            let kb = k.slice(s![krows.clone(), cols.clone()]);
            let vb = v.slice(s![krows.clone(), cols.clone()]);
            let dout = dctx.slice(s![qrows.clone(), cols.clone()]);
            let mut dp = dout.dot(&vb.t());
            dv.slice_mut(s![krows.clone(), cols.clone()])
                .assign(&p.t().dot(&dout));
            for (mut dpr, pr) in dp.rows_mut().into_iter().zip(p.rows()) {
                let dot = dpr
                    .iter()
                    .zip(pr.iter())
                    .fold(T::zero(), |a, (&x, &y)| a + x * y);
                Zip::from(&mut dpr)
                    .and(&pr)
                    .for_each(|g, &pp| *g = pp * (*g - dot) * scale);
            }
            dq.slice_mut(s![qrows, cols.clone()]).assign(&dp.dot(&kb));
            dk.slice_mut(s![krows, cols]).assign(&dp.t().dot(&qb));
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_norm_rows_are_standardised() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0], [-1.0, 0.0, 0.0, 5.0]];
        let g = Array1::ones(4);
        let b = Array1::zeros(4);
        let (y, _) = layer_norm(&x.view(), &g.view(), &b.view());
        for r in y.rows() {
            assert!(r.mean().unwrap().abs() < 1e-12);
            let var = r.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        let x = array![[-3.0f64, -0.5, 0.0, 0.7, 2.5]];
        let g = gelu_backward(&x, &Array2::ones((1, 5)));
        let h = 1e-6;
        for j in 0..5 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[[0, j]] += h;
            b[[0, j]] -= h;
            let fd = (gelu(&a)[[0, j]] - gelu(&b)[[0, j]]) / (2.0 * h);
            assert!((fd - g[[0, j]]).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_prefix_masks_the_tail() {
        let mut row = [1.0f64, 2.0, 3.0, 100.0];
        softmax_prefix(&mut row, 3, 1.0);
        assert_eq!(row[3], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
