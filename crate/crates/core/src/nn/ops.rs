use ndarray::{Array1, Array2, Axis, Zip};

use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

pub(super) struct LnCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

pub(super) fn layer_norm<T: Scalar>(x: &Array2<T>, g: &Array2<T>, b: &Array2<T>) -> (Array2<T>, LnCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / d;
        *r = T::one() / (var + eps).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates gain and bias gradients.
pub(super) fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    g: &Array2<T>,
    dg: &mut Array2<T>,
    db: &mut Array2<T>,
) -> Array2<T> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d = T::of(dy.ncols() as f64);
    let mut dx = dy * g;
    Zip::from(dx.rows_mut())
        .and(cache.xhat.rows())
        .and(&cache.rstd)
        .for_each(|mut dxh, xh, &rstd| {
            let mean_d = dxh.sum() / d;
            let mean_dx = dxh.iter().zip(xh.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b) / d;
            dxh.zip_mut_with(&xh, |v, &xv| *v = rstd * (*v - mean_d - xv * mean_dx));
        });
    dx
}

/// In-place row softmax; `-inf` entries become exact zeros.
pub(super) fn softmax_rows<T: Scalar>(m: &mut Array2<T>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub(super) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub(super) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_masks_and_normalizes() {
        let mut m = array![[1.0f64, f64::NEG_INFINITY, 3.0]];
        softmax_rows(&mut m);
        assert_eq!(m[[0, 1]], 0.0);
        assert!((m.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let x = array![[0.3f64, -1.2, 2.0, 0.5], [1.0, 0.1, -0.4, 0.9]];
        let g = array![[1.1f64, 0.9, -0.5, 2.0]];
        let b = array![[0.1f64, 0.0, -0.2, 0.3]];
        let w = array![[0.7f64, -0.3, 0.2, 1.5], [-1.0, 0.4, 0.8, 0.05]];
        let loss = |x: &Array2<f64>| (layer_norm(x, &g, &b).0 * &w).sum();
        let (_, cache) = layer_norm(&x, &g, &b);
        let mut dg = Array2::zeros(g.raw_dim());
        let mut db = Array2::zeros(b.raw_dim());
        let dx = layer_norm_backward(&w, &cache, &g, &mut dg, &mut db);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-6, "{fd} vs {}", dx[[i, j]]);
            }
        }
    }
}
