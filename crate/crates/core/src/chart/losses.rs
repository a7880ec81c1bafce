use crate::setmetrics::{dist, Point};

/// Pairs closer than this in dissimilarity are left out of the pairwise
/// loss.
pub const PAIR_FLOOR: f64 = 1e-3;

pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Point>,
}

impl LossGrad {
    fn zero(n: usize) -> Self {
        LossGrad { value: 0.0, grad: vec![[0.0; 2]; n] }
    }
}

/// Mean of `(||y_i - y_j|| - d_ij)^2 / d_ij` over ordered pairs with
/// `d_ij > PAIR_FLOOR`. `d` is the row-major `n x n` dissimilarity block.
pub fn loss_pairwise(emb: &[Point], d: &[f64]) -> LossGrad {
    let n = emb.len();
    assert_eq!(d.len(), n * n);
    let mut out = LossGrad::zero(n);
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            let dij = d[i * n + j];
            if i == j || dij <= PAIR_FLOOR {
                continue;
            }
            count += 1;
            let delta = dist(&emb[i], &emb[j]);
            out.value += (delta - dij).powi(2) / dij;
            if delta > 0.0 {
                let s = 2.0 * (delta - dij) / (dij * delta);
                for k in 0..2 {
                    let g = s * (emb[i][k] - emb[j][k]);
                    out.grad[i][k] += g;
                    out.grad[j][k] -= g;
                }
            }
        }
    }
    if count > 0 {
        let c = count as f64;
        out.value /= c;
        out.grad.iter_mut().for_each(|g| {
            g[0] /= c;
            g[1] /= c;
        });
    }
    out
}

/// Mean hinge `max(0, ||y_r - y_p|| - ||y_r - y_n|| + margin)` over
/// `(reference, positive, negative)` index triples into `emb`.
pub fn loss_triplet(emb: &[Point], triplets: &[(usize, usize, usize)], margin: f64) -> LossGrad {
    let mut out = LossGrad::zero(emb.len());
    if triplets.is_empty() {
        return out;
    }
    let c = triplets.len() as f64;
    for &(r, p, n) in triplets {
        let dp = dist(&emb[r], &emb[p]);
        let dn = dist(&emb[r], &emb[n]);
        let h = dp - dn + margin;
        if h <= 0.0 {
            continue;
        }
        out.value += h / c;
        for k in 0..2 {
            if dp > 0.0 {
                let g = (emb[r][k] - emb[p][k]) / dp / c;
                out.grad[r][k] += g;
                out.grad[p][k] -= g;
            }
            if dn > 0.0 {
                let g = (emb[r][k] - emb[n][k]) / dn / c;
                out.grad[r][k] -= g;
                out.grad[n][k] += g;
            }
        }
    }
    out
}

/// Mean squared distance to the anchors over the masked samples.
pub fn loss_los(emb: &[Point], anchors: &[Point], mask: &[bool]) -> LossGrad {
    let mut out = LossGrad::zero(emb.len());
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return out;
    }
    let c = count as f64;
    for i in 0..emb.len() {
        if !mask[i] {
            continue;
        }
        let (dx, dy) = (emb[i][0] - anchors[i][0], emb[i][1] - anchors[i][1]);
        out.value += (dx * dx + dy * dy) / c;
        out.grad[i] = [2.0 * dx / c, 2.0 * dy / c];
    }
    out
}

/// Mean squared error against per-sample labels.
pub fn loss_fingerprint(emb: &[Point], labels: &[Point]) -> LossGrad {
    loss_los(emb, labels, &vec![true; emb.len()])
}
