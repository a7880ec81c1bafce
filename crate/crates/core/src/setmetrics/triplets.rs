use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::DissimilarityMatrix;
use crate::chansim::mix_seed;

pub const DEFAULT_PER_REFERENCE_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub reference: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub lower: f64,
    pub upper: f64,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

fn sample_pairs(r: usize, pos: &[usize], neg: &[usize], cap: usize, seed: u64, out: &mut Vec<Triplet>) {
    if pos.is_empty() || neg.is_empty() || cap == 0 {
        return;
    }
    let total = pos.len() * neg.len();
    if total <= cap {
        for &p in pos {
            for &n in neg {
                out.push(Triplet { reference: r, positive: p, negative: n });
            }
        }
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, r as u64));
    let mut seen = HashSet::with_capacity(cap);
    while seen.len() < cap {
        let k = rng.random_range(0..total);
        if seen.insert(k) {
            out.push(Triplet { reference: r, positive: pos[k / neg.len()], negative: neg[k % neg.len()] });
        }
    }
}

/// Triplets with `d(r, p) <= lower < d(r, n) <= upper` under a dissimilarity
/// matrix, at most `cap` per reference.
pub fn mine_triplets(d: &DissimilarityMatrix, lower: f64, upper: f64, cap: usize, seed: u64) -> TripletSet {
    assert!(0.0 <= lower && lower < upper, "triplet thresholds need 0 <= lower < upper");
    let mut triplets = Vec::new();
    for r in 0..d.n {
        let row = d.row(r);
        let pos: Vec<usize> = (0..d.n).filter(|&j| j != r && row[j] <= lower).collect();
        let neg: Vec<usize> = (0..d.n).filter(|&j| row[j] > lower && row[j] <= upper).collect();
        sample_pairs(r, &pos, &neg, cap, seed, &mut triplets);
    }
    TripletSet { triplets, lower, upper }
}

/// Triplets from timestamps: `|t_p - t_r| <= lower < |t_n - t_r| <= upper`.
pub fn mine_triplets_from_timestamps(t: &[f64], lower: f64, upper: f64, cap: usize, seed: u64) -> TripletSet {
    assert!(0.0 <= lower && lower < upper, "triplet thresholds need 0 <= lower < upper");
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|a, b| t[*a].total_cmp(&t[*b]).then(a.cmp(b)));
    let sorted: Vec<f64> = order.iter().map(|&i| t[i]).collect();
    let mut triplets = Vec::new();
    for r in 0..t.len() {
        let lo = sorted.partition_point(|x| *x < t[r] - upper);
        let hi = sorted.partition_point(|x| *x <= t[r] + upper);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for &j in &order[lo..hi] {
            let gap = (t[j] - t[r]).abs();
            if j != r && gap <= lower {
                pos.push(j);
            } else if gap > lower && gap <= upper {
                neg.push(j);
            }
        }
        pos.sort_unstable();
        neg.sort_unstable();
        sample_pairs(r, &pos, &neg, cap, seed, &mut triplets);
    }
    TripletSet { triplets, lower, upper }
}
