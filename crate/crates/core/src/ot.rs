//! Entropic optimal transport: Sinkhorn scaling, a differentiable
//! transport loss and barycentric label projection.
//!
//! The Gibbs kernel is `exp(-epsilon * C)`, so `epsilon` acts as an inverse
//! temperature: larger values mean weaker regularization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::setmetrics::{dist, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { epsilon: 2.0 / 3.0, max_iter: 500, tol: 1e-6, log_domain: true }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("sinkhorn epsilon {} must be positive", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("sinkhorn max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("sinkhorn tol {} must be positive", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `||gamma 1 - u_s||_1` at exit.
    pub row_residual: f64,
    /// `||gamma^T 1 - u_t||_1` at exit.
    pub col_residual: f64,
    /// Total marginal residual after every iteration.
    pub residual_history: Vec<f64>,
}

impl TransportPlan {
    pub fn cost(&self, c: &DMatrix<f64>) -> f64 {
        self.gamma.component_mul(c).sum()
    }
}

fn residuals(gamma: &DMatrix<f64>, u_s: &[f64], u_t: &[f64]) -> (f64, f64) {
    let r: f64 = gamma.row_iter().zip(u_s).map(|(row, u)| (row.sum() - u).abs()).sum();
    let c: f64 = gamma.column_iter().zip(u_t).map(|(col, u)| (col.sum() - u).abs()).sum();
    (r, c)
}

fn check_inputs(c: &DMatrix<f64>, u_s: &[f64], u_t: &[f64], cfg: &SinkhornConfig) -> Result<()> {
    cfg.validate()?;
    if c.nrows() != u_s.len() {
        return Err(Error::DimensionMismatch { expected: u_s.len(), got: c.nrows() });
    }
    if c.ncols() != u_t.len() {
        return Err(Error::DimensionMismatch { expected: u_t.len(), got: c.ncols() });
    }
    if u_s.is_empty() || u_t.is_empty() {
        return Err(Error::DegenerateInput("transport needs nonempty marginals".into()));
    }
    if c.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::DegenerateInput("cost matrix must be finite and nonnegative".into()));
    }
    if u_s.iter().chain(u_t).any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::DegenerateInput("marginals must be positive".into()));
    }
    let (ss, st): (f64, f64) = (u_s.iter().sum(), u_t.iter().sum());
    if (ss - st).abs() > 1e-8 {
        return Err(Error::InfeasibleMarginals { source_mass: ss, target_mass: st });
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Alternating scaling `a = u_s / (K b)`, `b = u_t / (K^T a)` with
/// `K = exp(-epsilon C)`.
pub fn sinkhorn(c: &DMatrix<f64>, u_s: &[f64], u_t: &[f64], cfg: &SinkhornConfig) -> Result<TransportPlan> {
    check_inputs(c, u_s, u_t, cfg)?;
    if cfg.log_domain {
        Ok(sinkhorn_log(c, u_s, u_t, cfg))
    } else {
        sinkhorn_plain(c, u_s, u_t, cfg)
    }
}

fn sinkhorn_plain(c: &DMatrix<f64>, u_s: &[f64], u_t: &[f64], cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (n, m) = c.shape();
    let k = c.map(|x| (-cfg.epsilon * x).exp());
    if k.iter().any(|x| *x == 0.0 || !x.is_normal()) {
        return Err(Error::NumericalUnderflow);
    }
    let mut a = vec![1.0; n];
    let mut b = vec![1.0; m];
    let mut history = Vec::new();
    let mut plan = DMatrix::zeros(n, m);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        for i in 0..n {
            let kb: f64 = (0..m).map(|j| k[(i, j)] * b[j]).sum();
            a[i] = u_s[i] / kb;
        }
        for j in 0..m {
            let ka: f64 = (0..n).map(|i| k[(i, j)] * a[i]).sum();
            b[j] = u_t[j] / ka;
        }
        if a.iter().chain(&b).any(|x| !x.is_finite() || *x == 0.0) {
            return Err(Error::NumericalUnderflow);
        }
        plan = DMatrix::from_fn(n, m, |i, j| a[i] * k[(i, j)] * b[j]);
        let (r, s) = residuals(&plan, u_s, u_t);
        history.push(r + s);
        if r + s <= cfg.tol {
            converged = true;
            break;
        }
    }
    let (row_residual, col_residual) = residuals(&plan, u_s, u_t);
    Ok(TransportPlan { gamma: plan, converged, iterations, row_residual, col_residual, residual_history: history })
}

fn sinkhorn_log(c: &DMatrix<f64>, u_s: &[f64], u_t: &[f64], cfg: &SinkhornConfig) -> TransportPlan {
    let (n, m) = c.shape();
    let lk = c.map(|x| -cfg.epsilon * x);
    let ls: Vec<f64> = u_s.iter().map(|u| u.ln()).collect();
    let lt: Vec<f64> = u_t.iter().map(|u| u.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let plan_of = |f: &[f64], g: &[f64]| DMatrix::from_fn(n, m, |i, j| (f[i] + lk[(i, j)] + g[j]).exp());
    let mut plan = plan_of(&f, &g);
    for _ in 0..cfg.max_iter {
        iterations += 1;
        for i in 0..n {
            f[i] = ls[i] - log_sum_exp((0..m).map(|j| lk[(i, j)] + g[j]));
        }
        for j in 0..m {
            g[j] = lt[j] - log_sum_exp((0..n).map(|i| lk[(i, j)] + f[i]));
        }
        plan = plan_of(&f, &g);
        let (r, s) = residuals(&plan, u_s, u_t);
        history.push(r + s);
        if r + s <= cfg.tol {
            converged = true;
            break;
        }
    }
    let (row_residual, col_residual) = residuals(&plan, u_s, u_t);
    TransportPlan { gamma: plan, converged, iterations, row_residual, col_residual, residual_history: history }
}

/// Entropy-regularized objective `<G, C> + (1/epsilon) sum G (log G - 1)`
/// evaluated at a plan.
pub fn regularized_objective(plan: &DMatrix<f64>, c: &DMatrix<f64>, epsilon: f64) -> f64 {
    let entropy: f64 = plan.iter().filter(|g| **g > 0.0).map(|g| g * (g.ln() - 1.0)).sum();
    plan.component_mul(c).sum() + entropy / epsilon
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtLoss {
    /// Transport cost `<G*, C>` of the entropic plan.
    pub value: f64,
    /// Regularized objective at the plan; its gradient is exactly the
    /// chained plan gradient returned in `grad`.
    pub objective: f64,
    /// Gradient with respect to each embedding, plan held fixed.
    pub grad: Vec<Point>,
    pub plan: TransportPlan,
}

/// Uniform-marginal transport loss between embeddings and target points
/// under Euclidean cost.
pub fn ot_loss(embeddings: &[Point], targets: &[Point], cfg: &SinkhornConfig) -> Result<OtLoss> {
    if embeddings.is_empty() || targets.is_empty() {
        return Err(Error::DegenerateInput("transport loss needs nonempty point sets".into()));
    }
    let (n, m) = (embeddings.len(), targets.len());
    let c = DMatrix::from_fn(n, m, |i, j| dist(&embeddings[i], &targets[j]));
    let plan = sinkhorn(&c, &vec![1.0 / n as f64; n], &vec![1.0 / m as f64; m], cfg)?;
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..m {
            let d = c[(i, j)];
            if d > 0.0 {
                let w = plan.gamma[(i, j)] / d;
                grad[i][0] += w * (embeddings[i][0] - targets[j][0]);
                grad[i][1] += w * (embeddings[i][1] - targets[j][1]);
            }
        }
    }
    Ok(OtLoss {
        value: plan.cost(&c),
        objective: regularized_objective(&plan.gamma, &c, cfg.epsilon),
        grad,
        plan,
    })
}

/// Plan-weighted average of the targets for each source point, using a
/// squared Euclidean cost and uniform marginals.
pub fn barycentric_labels(sources: &[Point], targets: &[Point], cfg: &SinkhornConfig) -> Result<Vec<Point>> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::DegenerateInput("label transport needs nonempty point sets".into()));
    }
    let (n, m) = (sources.len(), targets.len());
    let c = DMatrix::from_fn(n, m, |i, j| dist(&sources[i], &targets[j]).powi(2));
    let plan = sinkhorn(&c, &vec![1.0 / n as f64; n], &vec![1.0 / m as f64; m], cfg)?;
    Ok(project(&plan.gamma, targets))
}

/// `diag(G 1)^-1 G P`.
pub fn project(gamma: &DMatrix<f64>, targets: &[Point]) -> Vec<Point> {
    gamma
        .row_iter()
        .map(|row| {
            let mass: f64 = row.sum();
            let mut p = [0.0; 2];
            for (w, t) in row.iter().zip(targets) {
                p[0] += w * t[0];
                p[1] += w * t[1];
            }
            if mass > 0.0 {
                [p[0] / mass, p[1] / mass]
            } else {
                p
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setmetrics::exact_ot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn single_point_plan() {
        let c = DMatrix::from_element(1, 1, 3.0);
        let p = sinkhorn(&c, &[1.0], &[1.0], &SinkhornConfig::default()).unwrap();
        assert_eq!(p.iterations, 1);
        assert!((p.gamma[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weak_regularization_approaches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = DMatrix::from_fn(3, 3, |_, _| rng.random_range(0.0..10.0));
            let cfg = SinkhornConfig { epsilon: 20.0, max_iter: 20_000, tol: 1e-10, log_domain: true };
            let p = sinkhorn(&c, &uniform(3), &uniform(3), &cfg).unwrap();
            let (_, exact) = exact_ot(&uniform(3), &uniform(3), &c).unwrap();
            assert!((p.cost(&c) - exact).abs() <= 0.01 * exact.max(1e-2), "{} vs {exact}", p.cost(&c));
        }
    }

    #[test]
    fn strong_regularization_gives_independent_coupling() {
        let c = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let us = [0.2, 0.3, 0.5];
        let ut = [0.1, 0.2, 0.3, 0.4];
        let p = sinkhorn(&c, &us, &ut, &SinkhornConfig { epsilon: 1e-9, ..Default::default() }).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((p.gamma[(i, j)] - us[i] * ut[j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn plain_and_log_domain_agree_and_plain_underflows() {
        let c = DMatrix::from_fn(4, 5, |i, j| ((i as f64) - 0.7 * j as f64).abs());
        let cfg = SinkhornConfig { epsilon: 1.5, max_iter: 2000, tol: 1e-12, log_domain: true };
        let a = sinkhorn(&c, &uniform(4), &uniform(5), &cfg).unwrap();
        let b = sinkhorn(&c, &uniform(4), &uniform(5), &SinkhornConfig { log_domain: false, ..cfg }).unwrap();
        assert!((&a.gamma - &b.gamma).abs().max() < 1e-12);
        let far = DMatrix::from_element(2, 2, 2000.0);
        let plain = SinkhornConfig { log_domain: false, ..Default::default() };
        assert!(matches!(sinkhorn(&far, &uniform(2), &uniform(2), &plain), Err(Error::NumericalUnderflow)));
        assert!(sinkhorn(&far, &uniform(2), &uniform(2), &SinkhornConfig::default()).is_ok());
    }

    #[test]
    fn marginals_and_monotone_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = DMatrix::from_fn(6, 5, |_, _| rng.random_range(0.0..30.0));
        let p = sinkhorn(&c, &uniform(6), &uniform(5), &SinkhornConfig::default()).unwrap();
        assert!(p.converged);
        assert!(p.row_residual + p.col_residual <= 2.0 * 1e-6);
        for w in p.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn ot_loss_single_pair() {
        let l = ot_loss(&[[0.0, 0.0]], &[[3.0, 4.0]], &SinkhornConfig::default()).unwrap();
        assert!((l.value - 5.0).abs() < 1e-12);
        // Descent moves the embedding straight toward the target.
        assert!((l.grad[0][0] + 0.6).abs() < 1e-12 && (l.grad[0][1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn ot_loss_vanishes_on_permuted_targets() {
        let t: Vec<Point> = (0..6).map(|i| [i as f64 * 7.0, (i * i) as f64]).collect();
        let e: Vec<Point> = [3, 0, 5, 1, 4, 2].iter().map(|&k| t[k]).collect();
        let cfg = SinkhornConfig { epsilon: 50.0, max_iter: 5000, tol: 1e-9, log_domain: true };
        let l = ot_loss(&e, &t, &cfg).unwrap();
        assert!(l.value < 1e-3 * 40.0);
    }

    #[test]
    fn barycentric_examples() {
        let t: Vec<Point> = vec![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let s = vec![[1.0, 9.0], [9.0, 1.0], [0.5, 0.5]];
        let labels = barycentric_labels(&s, &t, &SinkhornConfig { tol: 1e-12, max_iter: 5000, ..Default::default() })
            .unwrap();
        for (l, want) in labels.iter().zip([t[2], t[1], t[0]]) {
            assert!(dist(l, &want) < 1e-9);
        }
        let one = barycentric_labels(&[[40.0, 40.0]], &t, &SinkhornConfig::default()).unwrap();
        assert!(dist(&one[0], &[10.0 / 3.0, 10.0 / 3.0]) < 1e-12);
    }
}
