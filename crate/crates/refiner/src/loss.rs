//! Boundary-weighted cross-entropy plus weighted soft IoU.

use serde::{Deserialize, Serialize};

use crate::tensor::sigmoid;

/// Probability floor used for pixels whose prediction is forced to zero.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub wbce: f64,
    pub wiou: f64,
}

/// `1 + 5 |avgpool_k(y) - y|` with zero padding counted in the window.
pub fn edge_weights(target: &[f64], h: usize, w: usize, kernel: usize) -> Vec<f64> {
    let iw = w + 1;
    let mut integral = vec![0.0; (h + 1) * iw];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += target[r * w + c];
            integral[(r + 1) * iw + c + 1] = integral[r * iw + c + 1] + row;
        }
    }
    let half = kernel / 2;
    let area = (kernel * kernel) as f64;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let (t, b) = (r.saturating_sub(half), (r + half + 1).min(h));
        for c in 0..w {
            let (l, rt) = (c.saturating_sub(half), (c + half + 1).min(w));
            let s = integral[b * iw + rt] - integral[t * iw + rt] - integral[b * iw + l] + integral[t * iw + l];
            out.push(1.0 + 5.0 * (s / area - target[r * w + c]).abs());
        }
    }
    out
}

/// Loss and its gradient with respect to the logits.
///
/// With a `gate`, pixels outside it have probability exactly 0: their cross-entropy is the
/// constant `-y ln(PROB_EPS)` and they receive no gradient.
pub fn structure_loss(
    logits: &[f64],
    target: &[f64],
    gate: Option<&[bool]>,
    h: usize,
    w: usize,
    kernel: usize,
) -> (LossParts, Vec<f64>) {
    let n = h * w;
    let weit = edge_weights(target, h, w, kernel);
    let wsum: f64 = weit.iter().sum();
    let open = |i: usize| gate.is_none_or(|g| g[i]);
    let mut prob = vec![0.0; n];
    let mut bce_sum = 0.0;
    for i in 0..n {
        let y = target[i];
        if open(i) {
            let z = logits[i];
            prob[i] = sigmoid(z);
            bce_sum += weit[i] * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
        } else {
            bce_sum += weit[i] * (-y * PROB_EPS.ln());
        }
    }
    let wbce = bce_sum / wsum;
    let mut inter = 0.0;
    let mut union = 0.0;
    for i in 0..n {
        inter += prob[i] * target[i] * weit[i];
        union += (prob[i] + target[i]) * weit[i];
    }
    let den = union - inter + 1.0;
    let wiou = 1.0 - (inter + 1.0) / den;

    let mut grad = vec![0.0; n];
    for i in 0..n {
        if !open(i) {
            continue;
        }
        let (p, y, wt) = (prob[i], target[i], weit[i]);
        let d_bce = wt * (p - y) / wsum;
        // d wiou / d p: inter' = y w, union' = w
        let d_inter = y * wt;
        let d_den = wt - d_inter;
        let d_iou = -(d_inter * den - (inter + 1.0) * d_den) / (den * den);
        grad[i] = d_bce + d_iou * p * (1.0 - p);
    }
    (
        LossParts {
            total: wbce + wiou,
            wbce,
            wiou,
        },
        grad,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_one_on_flat_interior() {
        let t = vec![1.0; 100];
        let w = edge_weights(&t, 10, 10, 3);
        assert!((w[55] - 1.0).abs() < 1e-12);
        // corner window holds 4 of 9 ones
        assert!((w[0] - (1.0 + 5.0 * (1.0 - 4.0 / 9.0))).abs() < 1e-12);
        assert!(edge_weights(&[0.0; 16], 4, 4, 5).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (h, w) = (6, 7);
        let target: Vec<f64> = (0..h * w).map(|i| ((i / w) > 1 && (i % w) < 4) as u8 as f64).collect();
        let logits: Vec<f64> = (0..h * w).map(|i| ((i * 29) % 13) as f64 / 4.0 - 1.5).collect();
        let gate: Vec<bool> = (0..h * w).map(|i| i % 5 != 0).collect();
        for g in [None, Some(gate.as_slice())] {
            let (_, grad) = structure_loss(&logits, &target, g, h, w, 3);
            for i in [0, 3, 11, 20, 33, 41] {
                let eps = 1e-6;
                let mut lp = logits.clone();
                lp[i] += eps;
                let mut lm = logits.clone();
                lm[i] -= eps;
                let fd = (structure_loss(&lp, &target, g, h, w, 3).0.total
                    - structure_loss(&lm, &target, g, h, w, 3).0.total)
                    / (2.0 * eps);
                assert!((fd - grad[i]).abs() < 1e-8, "{i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn uninformative_predictor_loss() {
        // all-zero logits: p = 0.5, bce = ln 2
        let target: Vec<f64> = (0..64).map(|i| (i < 16) as u8 as f64).collect();
        let (parts, _) = structure_loss(&[0.0; 64], &target, None, 8, 8, 3);
        assert!((parts.wbce - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
