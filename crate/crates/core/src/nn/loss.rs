use ndarray::{Array2, Axis};

use crate::scalar::Scalar;

/// Logits row `position` is trained to predict token `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenTarget {
    pub position: usize,
    pub target: u32,
}

/// Summed label-smoothed cross-entropy over `targets`, and its gradient
/// with respect to `logits`. The smoothed target puts `1 - smoothing` on the
/// gold token and spreads `smoothing` uniformly over the vocabulary.
pub fn smoothed_cross_entropy<T: Scalar>(
    logits: &Array2<T>,
    targets: &[TokenTarget],
    smoothing: T,
) -> (T, Array2<T>) {
    let vocab = logits.ncols();
    let uniform = smoothing / T::of(vocab as f64);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = T::zero();
    for tt in targets {
        let row = logits.index_axis(Axis(0), tt.position);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let log_z = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        let mut sum_logp = T::zero();
        let mut g = grad.index_axis_mut(Axis(0), tt.position);
        for (k, (&v, gk)) in row.iter().zip(g.iter_mut()).enumerate() {
            let logp = v - log_z;
            sum_logp = sum_logp + logp;
            let q = if k == tt.target as usize {
                T::one() - smoothing + uniform
            } else {
                uniform
            };
            *gk = *gk + logp.exp() - q;
        }
        let gold = row[tt.target as usize] - log_z;
        total = total - (T::one() - smoothing) * gold - uniform * sum_logp;
    }
    (total, grad)
}

/// One tagged position with its class weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TagTarget<T> {
    pub position: usize,
    pub positive: bool,
    pub weight: T,
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Summed weighted binary cross-entropy of a `len x 1` logit column, and its
/// gradient.
pub fn weighted_binary_cross_entropy<T: Scalar>(
    logits: &Array2<T>,
    targets: &[TagTarget<T>],
) -> (T, Array2<T>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = T::zero();
    for t in targets {
        let z = logits[[t.position, 0]];
        let (nll, y) = if t.positive {
            (softplus(-z), T::one())
        } else {
            (softplus(z), T::zero())
        };
        total = total + t.weight * nll;
        grad[[t.position, 0]] = grad[[t.position, 0]] + t.weight * (sigmoid(z) - y);
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cross_entropy_gradient_matches_finite_difference() {
        let logits = array![[0.2f64, -1.0, 0.7], [1.5, 0.3, -0.2]];
        let targets = [TokenTarget { position: 0, target: 2 }, TokenTarget { position: 1, target: 0 }];
        for smoothing in [0.0, 0.1] {
            let (_, g) = smoothed_cross_entropy(&logits, &targets, smoothing);
            let h = 1e-6;
            for i in 0..2 {
                for j in 0..3 {
                    let mut p = logits.clone();
                    p[[i, j]] += h;
                    let mut m = logits.clone();
                    m[[i, j]] -= h;
                    let fd = (smoothed_cross_entropy(&p, &targets, smoothing).0
                        - smoothed_cross_entropy(&m, &targets, smoothing).0)
                        / (2.0 * h);
                    assert!((fd - g[[i, j]]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn unsmoothed_loss_is_negative_log_likelihood() {
        let logits = array![[0.0f64, 0.0, 0.0, 0.0]];
        let (l, _) = smoothed_cross_entropy(&logits, &[TokenTarget { position: 0, target: 1 }], 0.0);
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn smoothing_never_lowers_loss_below_entropy_floor() {
        let logits = array![[3.0f64, -1.0, 0.5, 0.0, 2.0]];
        let t = [TokenTarget { position: 0, target: 0 }];
        let (plain, _) = smoothed_cross_entropy(&logits, &t, 0.0);
        let eps = 0.1;
        let (smooth, _) = smoothed_cross_entropy(&logits, &t, eps);
        // the smoothed target's own entropy bounds the smoothed loss from below
        let v = 5.0;
        let q_gold: f64 = 1.0 - eps + eps / v;
        let q_other: f64 = eps / v;
        let entropy = -q_gold * q_gold.ln() - (v - 1.0) * q_other * q_other.ln();
        assert!(smooth >= entropy);
        assert!(smooth >= plain - entropy);
        assert!(plain.is_finite() && smooth.is_finite());
    }

    #[test]
    fn bce_hand_computed_three_tokens() {
        // confidences 0.8, 0.3, 0.6 for labels 1, 0, 1 with weights 10 and 1/0.9
        let conf = [0.8f64, 0.3, 0.6];
        let logits = Array2::from_shape_fn((3, 1), |(i, _)| (conf[i] / (1.0 - conf[i])).ln());
        let wp = 10.0;
        let wn = 1.0 / 0.9;
        let t = [
            TagTarget { position: 0, positive: true, weight: wp },
            TagTarget { position: 1, positive: false, weight: wn },
            TagTarget { position: 2, positive: true, weight: wp },
        ];
        let (loss, _) = weighted_binary_cross_entropy(&logits, &t);
        let hand = -(wp * 0.8f64.ln() + wn * 0.7f64.ln() + wp * 0.6f64.ln());
        assert!((loss - hand).abs() < 1e-9, "{loss} vs {hand}");
    }
}
