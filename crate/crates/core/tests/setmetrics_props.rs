use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use uniloc::estimation::PathEstimate;
use uniloc::ot::{sinkhorn, SinkhornConfig};
use uniloc::setmetrics::{
    dist, exact_ot, fuse, fusion_weight, geodesic_complete, gospa, gospa_matrix, DissimKind, DissimilarityMatrix,
    GospaParams, Point,
};

fn point() -> impl Strategy<Value = Point> {
    (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| [x, y])
}

fn set(max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(point(), 0..=max)
}

fn params() -> impl Strategy<Value = GospaParams> {
    (1.0..3.0f64, 1.0..60.0f64, 0.1..=2.0f64).prop_map(|(p, zeta, varpi)| GospaParams { p, zeta, varpi })
}

fn estimates(pts: &[Point]) -> Vec<PathEstimate> {
    pts.iter()
        .enumerate()
        .map(|(k, p)| PathEstimate {
            beta: Complex64::new(1.0, 0.0),
            theta: 0.0,
            tau: 1e-7 * (k + 1) as f64,
            position: [p[0], p[1], 1.5],
            clamped: false,
        })
        .collect()
}

proptest! {
    #[test]
    fn gospa_is_symmetric_and_vanishes_on_equal_sets(a in set(5), b in set(5), p in params()) {
        prop_assert!((gospa(&a, &b, &p) - gospa(&b, &a, &p)).abs() <= 1e-9);
        prop_assert!(gospa(&a, &a, &p).abs() <= 1e-9);
        prop_assert!(gospa(&a, &b, &p) >= 0.0);
    }

    #[test]
    fn gospa_triangle_inequality_with_full_mismatch_penalty(a in set(4), b in set(4), c in set(4), zeta in 1.0..60.0f64) {
        // varpi = 2 makes GOSPA a metric for every p >= 1.
        let p = GospaParams { p: 1.0, zeta, varpi: 2.0 };
        prop_assert!(gospa(&a, &c, &p) <= gospa(&a, &b, &p) + gospa(&b, &c, &p) + 1e-9);
    }

    #[test]
    fn gospa_is_bounded_by_cutoffs(a in set(5), b in set(5), zeta in 1.0..60.0f64) {
        let p = GospaParams { p: 1.0, zeta, varpi: 2.0 };
        let worst = zeta * a.len().min(b.len()) as f64 + zeta / 2.0 * a.len().abs_diff(b.len()) as f64;
        prop_assert!(gospa(&a, &b, &p) <= worst + 1e-9);
    }

    #[test]
    fn dissimilarity_matrix_is_symmetric_with_zero_diagonal(sets in prop::collection::vec(set(4).prop_filter("nonempty", |s| !s.is_empty()), 2..8)) {
        let est: Vec<Vec<PathEstimate>> = sets.iter().map(|s| estimates(s)).collect();
        let m = gospa_matrix(&est, 20.0).unwrap();
        for i in 0..m.n {
            prop_assert_eq!(m.get(i, i), 0.0);
            for j in 0..m.n {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn fused_value_lies_between_its_parts(gg in 0.0..100.0f64, w in 0.0..100.0f64, vartheta in 0.0..1.0f64, d_thre in 0.0..30.0f64) {
        let f = fuse(gg, w, vartheta, d_thre);
        prop_assert!(f >= gg.min(w) - 1e-9 && f <= gg.max(w) + 1e-9);
        let a = fusion_weight(gg, vartheta, d_thre);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn geodesic_dominates_a_metric_and_is_a_metric(pts in prop::collection::vec(point(), 3..25), k in 1usize..6) {
        let n = pts.len();
        let values = (0..n * n).map(|q| dist(&pts[q / n], &pts[q % n])).collect();
        let d = DissimilarityMatrix::new(DissimKind::Gospa, n, values, vec![]);
        let g = geodesic_complete(&d, k);
        for i in 0..n {
            for j in 0..n {
                prop_assert!(g.get(i, j).is_finite());
                prop_assert!(g.get(i, j) >= d.get(i, j) - 1e-9);
                prop_assert!((g.get(i, j) - g.get(j, i)).abs() <= 1e-9);
                for m in 0..n {
                    prop_assert!(g.get(i, j) <= g.get(i, m) + g.get(m, j) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn sinkhorn_meets_marginals_and_upper_bounds_exact(n in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
        let mut s = seed;
        let c = DMatrix::from_fn(n, m, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        let (us, ut) = (vec![1.0 / n as f64; n], vec![1.0 / m as f64; m]);
        let cfg = SinkhornConfig { epsilon: 5.0, max_iter: 50_000, tol: 1e-10, log_domain: true };
        let plan = sinkhorn(&c, &us, &ut, &cfg).unwrap();
        prop_assert!(plan.row_residual + plan.col_residual <= 1e-8);
        let (_, exact) = exact_ot(&us, &ut, &c).unwrap();
        prop_assert!(plan.cost(&c) >= exact - 1e-9);
    }

    #[test]
    fn matrix_file_round_trip(n in 1usize..12, seed in any::<u32>()) {
        let values: Vec<f64> = (0..n * n)
            .map(|q| { let (i, j) = (q / n, q % n); if i == j { 0.0 } else { ((i + j) as f64 + seed as f64 * 1e-6).sqrt() } })
            .collect();
        let d = DissimilarityMatrix::new(DissimKind::Fusi, n, values, vec![]);
        let back = DissimilarityMatrix::from_bytes(&d.to_bytes()).unwrap();
        prop_assert_eq!(back.n, n);
        prop_assert_eq!(back.kind, DissimKind::Fusi);
        for (a, b) in back.values.iter().zip(&d.values) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }
}

#[test]
fn exact_transport_on_a_permutation() {
    // Cost zero on a permutation, one elsewhere: the optimum is zero.
    let c = DMatrix::from_fn(3, 3, |i, j| if j == (i + 1) % 3 { 0.0 } else { 1.0 });
    let (plan, cost) = exact_ot(&[1.0 / 3.0; 3], &[1.0 / 3.0; 3], &c).unwrap();
    assert_abs_diff_eq!(cost, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(plan[(2, 0)], 1.0 / 3.0, epsilon = 1e-12);
}
