//! Set-based dissimilarities between model-based path estimates.

mod assignment;
mod geodesic;
mod matrix;
mod transport;
mod triplets;

pub use assignment::hungarian;
pub use geodesic::{dijkstra, geodesic_complete, neighbor_graph, DEFAULT_K_NEIGHBORS};
pub use matrix::{DissimKind, DissimilarityMatrix, MATRIX_MAGIC};
pub use transport::exact_ot;
pub use triplets::{mine_triplets, mine_triplets_from_timestamps, Triplet, TripletSet, DEFAULT_PER_REFERENCE_CAP};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::PathEstimate;

pub type Point = [f64; 2];

pub fn dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaParams {
    pub p: f64,
    /// Cut-off distance in meters.
    pub zeta: f64,
    /// Cardinality mismatch factor in `(0, 2]`.
    pub varpi: f64,
}

impl GospaParams {
    /// First-order GOSPA with `varpi = 2`, as used for dissimilarities.
    pub fn dissimilarity(zeta: f64) -> Self {
        GospaParams { p: 1.0, zeta, varpi: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("gospa order p = {} must be >= 1", self.p)));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::Config(format!("gospa cut-off {} must be positive", self.zeta)));
        }
        if !(self.varpi > 0.0 && self.varpi <= 2.0) {
            return Err(Error::Config(format!("gospa varpi {} outside (0, 2]", self.varpi)));
        }
        Ok(())
    }
}

impl Default for GospaParams {
    fn default() -> Self {
        GospaParams::dissimilarity(20.0)
    }
}

/// GOSPA distance between two finite point sets.
pub fn gospa(xs: &[Point], xt: &[Point], params: &GospaParams) -> f64 {
    if xs.len() > xt.len() {
        return gospa(xt, xs, params);
    }
    let (n, m) = (xs.len(), xt.len());
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = dist(&xs[i], &xt[j]).min(params.zeta).powf(params.p);
        }
    }
    let (_, assigned) = hungarian(&cost, n, m);
    let miss = params.zeta.powf(params.p) / params.varpi * (m - n) as f64;
    (assigned + miss).powf(1.0 / params.p)
}

/// GOSPA between the surrogate positions of two estimate lists, normalized
/// by the mean list length.
pub fn gospa_dissimilarity(est_i: &[PathEstimate], est_j: &[PathEstimate], params: &GospaParams) -> Result<f64> {
    if est_i.is_empty() || est_j.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    let a: Vec<Point> = est_i.iter().map(|e| e.xy()).collect();
    let b: Vec<Point> = est_j.iter().map(|e| e.xy()).collect();
    Ok(gospa(&a, &b, params) / ((a.len() + b.len()) as f64 / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    pub support: Vec<Point>,
    pub weights: Vec<f64>,
    pub kappa: f64,
}

/// Probability masses decaying exponentially with the path delay.
pub fn path_distribution(estimates: &[PathEstimate], kappa: f64) -> PathDistribution {
    let t0 = estimates.iter().map(|e| e.tau).fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = estimates.iter().map(|e| (-kappa * (e.tau - t0)).exp()).collect();
    let total: f64 = raw.iter().sum();
    PathDistribution {
        support: estimates.iter().map(|e| e.xy()).collect(),
        weights: raw.iter().map(|w| w / total).collect(),
        kappa,
    }
}

/// `1 / median(max tau - min tau)` over samples with at least two paths.
pub fn default_kappa(estimates: &[Vec<PathEstimate>]) -> f64 {
    let mut spreads: Vec<f64> = estimates
        .iter()
        .filter(|e| e.len() >= 2)
        .map(|e| {
            let lo = e.iter().map(|p| p.tau).fold(f64::INFINITY, f64::min);
            let hi = e.iter().map(|p| p.tau).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .filter(|s| *s > 0.0)
        .collect();
    if spreads.is_empty() {
        return 1e8;
    }
    spreads.sort_by(f64::total_cmp);
    let k = spreads.len();
    let median = if k % 2 == 1 { spreads[k / 2] } else { 0.5 * (spreads[k / 2 - 1] + spreads[k / 2]) };
    1.0 / median
}

pub fn euclidean_cost(a: &[Point], b: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| dist(&a[i], &b[j]))
}

/// First-order Wasserstein distance between the path distributions of two
/// estimate lists.
pub fn wasserstein_dissimilarity(est_i: &[PathEstimate], est_j: &[PathEstimate], kappa: f64) -> Result<f64> {
    if est_i.is_empty() || est_j.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    let u = path_distribution(est_i, kappa);
    let v = path_distribution(est_j, kappa);
    let c = euclidean_cost(&u.support, &v.support);
    let (_, cost) = exact_ot(&u.weights, &v.weights, &c)?;
    Ok(cost)
}

/// Blends the geodesic GOSPA value with the Wasserstein value once the
/// former exceeds `d_thre`.
pub fn fuse(d_gg: f64, d_w: f64, vartheta: f64, d_thre: f64) -> f64 {
    let alpha = fusion_weight(d_gg, vartheta, d_thre);
    alpha * d_gg + (1.0 - alpha) * d_w
}

pub fn fusion_weight(d_gg: f64, vartheta: f64, d_thre: f64) -> f64 {
    if d_gg <= d_thre {
        1.0
    } else {
        1.0 / (1.0 + vartheta * d_gg)
    }
}

pub fn time_dissimilarity(t_i: f64, t_j: f64) -> f64 {
    (t_i - t_j).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub zeta: f64,
    /// `None` selects [`default_kappa`] for the dataset.
    pub kappa: Option<f64>,
    pub vartheta: f64,
    pub d_thre: f64,
    pub k_neighbors: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { zeta: 20.0, kappa: None, vartheta: 0.03, d_thre: 10.0, k_neighbors: DEFAULT_K_NEIGHBORS }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        GospaParams::dissimilarity(self.zeta).validate()?;
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Config(format!("kappa {k} must be positive")));
            }
        }
        if !(self.vartheta >= 0.0) || !(self.d_thre >= 0.0) {
            return Err(Error::Config("fusion parameters must be nonnegative".into()));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn gospa_matrix(estimates: &[Vec<PathEstimate>], zeta: f64) -> Result<DissimilarityMatrix> {
    let params = GospaParams::dissimilarity(zeta);
    let values = matrix::pairwise(estimates.len(), |i, j| gospa_dissimilarity(&estimates[i], &estimates[j], &params))?;
    Ok(DissimilarityMatrix::new(DissimKind::Gospa, estimates.len(), values, vec![("zeta".into(), zeta)]))
}

pub fn wasserstein_matrix(estimates: &[Vec<PathEstimate>], kappa: f64) -> Result<DissimilarityMatrix> {
    let values =
        matrix::pairwise(estimates.len(), |i, j| wasserstein_dissimilarity(&estimates[i], &estimates[j], kappa))?;
    Ok(DissimilarityMatrix::new(DissimKind::Wass, estimates.len(), values, vec![("kappa".into(), kappa)]))
}

pub fn time_matrix(timestamps: &[f64]) -> DissimilarityMatrix {
    let n = timestamps.len();
    let values = matrix::pairwise(n, |i, j| Ok(time_dissimilarity(timestamps[i], timestamps[j]))).unwrap();
    DissimilarityMatrix::new(DissimKind::Time, n, values, vec![])
}

pub fn fuse_matrices(gg: &DissimilarityMatrix, w: &DissimilarityMatrix, vartheta: f64, d_thre: f64) -> Result<DissimilarityMatrix> {
    if gg.n != w.n {
        return Err(Error::DimensionMismatch { expected: gg.n, got: w.n });
    }
    let values = gg.values.iter().zip(&w.values).map(|(a, b)| fuse(*a, *b, vartheta, d_thre)).collect();
    let mut params = gg.params.clone();
    params.extend(w.params.iter().cloned());
    params.push(("vartheta".into(), vartheta));
    params.push(("d_thre".into(), d_thre));
    Ok(DissimilarityMatrix::new(DissimKind::Fusi, gg.n, values, params))
}

/// The fused dissimilarity of a dataset's estimates: geodesic GOSPA blended
/// with Wasserstein.
pub fn fused_matrix(estimates: &[Vec<PathEstimate>], params: &MetricParams) -> Result<DissimilarityMatrix> {
    params.validate()?;
    let kappa = params.kappa.unwrap_or_else(|| default_kappa(estimates));
    let g = gospa_matrix(estimates, params.zeta)?;
    let gg = geodesic_complete(&g, params.k_neighbors);
    let w = wasserstein_matrix(estimates, kappa)?;
    fuse_matrices(&gg, &w, params.vartheta, params.d_thre)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn est(x: f64, y: f64, tau: f64) -> PathEstimate {
        PathEstimate { beta: Complex64::new(1.0, 0.0), theta: 0.0, tau, position: [x, y, 1.5], clamped: false }
    }

    fn brute_gospa(xs: &[Point], xt: &[Point], p: &GospaParams) -> f64 {
        if xs.len() > xt.len() {
            return brute_gospa(xt, xs, p);
        }
        fn rec(i: usize, xs: &[Point], xt: &[Point], used: &mut Vec<bool>, p: &GospaParams) -> f64 {
            if i == xs.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..xt.len() {
                if !used[j] {
                    used[j] = true;
                    let c = dist(&xs[i], &xt[j]).min(p.zeta).powf(p.p) + rec(i + 1, xs, xt, used, p);
                    used[j] = false;
                    best = best.min(c);
                }
            }
            best
        }
        let a = rec(0, xs, xt, &mut vec![false; xt.len()], p);
        (a + p.zeta.powf(p.p) / p.varpi * (xt.len() - xs.len()) as f64).powf(1.0 / p.p)
    }

    #[test]
    fn gospa_examples() {
        let p = GospaParams::dissimilarity(20.0);
        let a = [[1.0, 2.0], [5.0, -3.0]];
        assert_eq!(gospa(&a, &a, &p), 0.0);
        assert!((gospa(&[], &[[4.0, 4.0]], &p) - 10.0).abs() < 1e-12);
        let xt = [[3.0, 4.0], [100.0, 100.0]];
        let want = brute_gospa(&[[0.0, 0.0]], &xt, &p);
        assert!((want - 15.0).abs() < 1e-12);
        assert!((gospa(&[[0.0, 0.0]], &xt, &p) - want).abs() < 1e-12);
        assert_eq!(gospa(&xt, &[[0.0, 0.0]], &p), gospa(&[[0.0, 0.0]], &xt, &p));
    }

    #[test]
    fn gospa_dissimilarity_examples() {
        let p = GospaParams::dissimilarity(20.0);
        let a = vec![est(0.0, 0.0, 1e-7), est(10.0, 0.0, 2e-7)];
        assert_eq!(gospa_dissimilarity(&a, &a, &p).unwrap(), 0.0);
        let d = gospa_dissimilarity(&[est(0.0, 0.0, 0.0)], &[est(3.0, 4.0, 0.0)], &p).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
        let far = gospa_dissimilarity(&[est(0.0, 0.0, 0.0)], &[est(300.0, 4.0, 0.0)], &p).unwrap();
        assert!((far - 20.0).abs() < 1e-12);
        let b = vec![est(1.0, 1.0, 0.0), est(30.0, 0.0, 0.0), est(-4.0, 2.0, 0.0)];
        let pa: Vec<Point> = a.iter().map(|e| e.xy()).collect();
        let pb: Vec<Point> = b.iter().map(|e| e.xy()).collect();
        let want = brute_gospa(&pa, &pb, &p) / 2.5;
        assert!((gospa_dissimilarity(&a, &b, &p).unwrap() - want).abs() < 1e-12);
        assert!(matches!(gospa_dissimilarity(&[], &b, &p), Err(Error::EmptyEstimates)));
    }

    #[test]
    fn path_distribution_examples() {
        let e = vec![est(0.0, 0.0, 1e-7), est(1.0, 0.0, 3e-7), est(2.0, 0.0, 2e-7)];
        let u = path_distribution(&e, 1e-12);
        for w in &u.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        let kappa = 1e7;
        let two = vec![est(0.0, 0.0, 0.0), est(1.0, 0.0, 2f64.ln() / kappa)];
        let u = path_distribution(&two, kappa);
        assert!((u.weights[0] - 2.0 / 3.0).abs() < 1e-12 && (u.weights[1] - 1.0 / 3.0).abs() < 1e-12);
        let u = path_distribution(&e, kappa);
        assert!(u.weights[0] > u.weights[2] && u.weights[2] > u.weights[1]);
        assert!((u.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn wasserstein_examples() {
        let a = vec![est(0.0, 0.0, 1e-7), est(5.0, 1.0, 2e-7)];
        assert!(wasserstein_dissimilarity(&a, &a, 1e7).unwrap().abs() < 1e-12);
        for kappa in [1e3, 1e7, 1e9] {
            let d = wasserstein_dissimilarity(&[est(0.0, 0.0, 0.0)], &[est(6.0, 8.0, 5e-7)], kappa).unwrap();
            assert!((d - 10.0).abs() < 1e-12);
        }
        // 2x2: the plan has one free parameter t = Gamma[0][0].
        let b = vec![est(1.0, 7.0, 1.5e-7), est(-3.0, 2.0, 4e-7)];
        let kappa = 5e6;
        let (u, v) = (path_distribution(&a, kappa), path_distribution(&b, kappa));
        let c = euclidean_cost(&u.support, &v.support);
        let lo = (u.weights[0] - v.weights[1]).max(0.0);
        let hi = u.weights[0].min(v.weights[0]);
        let mut best = f64::INFINITY;
        for k in 0..=100_000 {
            let t = lo + (hi - lo) * k as f64 / 100_000.0;
            let g = [t, u.weights[0] - t, v.weights[0] - t, u.weights[1] - v.weights[0] + t];
            best = best.min(g[0] * c[(0, 0)] + g[1] * c[(0, 1)] + g[2] * c[(1, 0)] + g[3] * c[(1, 1)]);
        }
        let got = wasserstein_dissimilarity(&a, &b, kappa).unwrap();
        assert!((got - best).abs() < 1e-9, "{got} vs {best}");
        assert!((got - wasserstein_dissimilarity(&b, &a, kappa).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse(5.0, 99.0, 0.03, 10.0), 5.0);
        assert!((fusion_weight(30.0, 0.03, 10.0) - 1.0 / 1.9).abs() < 1e-12);
        assert!((fuse(30.0, 40.0, 0.03, 10.0) - 34.7368).abs() < 1e-4);
        assert_eq!(time_dissimilarity(1.0, 1.0), 0.0);
        assert_eq!(time_dissimilarity(1.0, 3.0), 2.0);
        assert_eq!(time_dissimilarity(3.0, 1.0), 2.0);
    }

    #[test]
    fn default_kappa_is_inverse_median_spread() {
        let e = vec![
            vec![est(0.0, 0.0, 1e-7), est(0.0, 0.0, 2e-7)],
            vec![est(0.0, 0.0, 1e-7), est(0.0, 0.0, 4e-7)],
            vec![est(0.0, 0.0, 1e-7)],
            vec![est(0.0, 0.0, 0.0), est(0.0, 0.0, 5e-7)],
        ];
        assert!((default_kappa(&e) - 1.0 / 3e-7).abs() < 1e-3);
    }

    #[test]
    fn fused_matrix_is_symmetric_with_zero_diagonal() {
        let e: Vec<Vec<PathEstimate>> = (0..12)
            .map(|i| {
                let x = i as f64 * 3.0;
                vec![est(x, 0.0, 1e-7), est(x + 40.0, 10.0, 2e-7 + i as f64 * 1e-9)]
            })
            .collect();
        let m = fused_matrix(&e, &MetricParams { k_neighbors: 3, ..Default::default() }).unwrap();
        assert_eq!(m.kind, DissimKind::Fusi);
        for i in 0..12 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..12 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!(m.get(i, j) >= 0.0);
            }
        }
    }
}
