//! Positioning and charting quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::setmetrics::{dist, Point};

/// Error statistics of one subset of users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStats {
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    pub e95: f64,
    pub median: f64,
    /// Sorted errors (m).
    pub cdf: Vec<f64>,
}

impl SubsetStats {
    pub fn from_errors(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let mut cdf = errors.to_vec();
        cdf.sort_by(f64::total_cmp);
        let n = cdf.len() as f64;
        Some(SubsetStats {
            count: cdf.len(),
            mae: cdf.iter().sum::<f64>() / n,
            rmse: (cdf.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            e95: percentile(&cdf, 0.95),
            median: percentile(&cdf, 0.5),
            cdf,
        })
    }
}

/// Percentile of sorted data by linear interpolation between order
/// statistics at rank `q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositioningReport {
    pub los: Option<SubsetStats>,
    pub nlos: Option<SubsetStats>,
    pub all: Option<SubsetStats>,
}

pub fn positioning_metrics(estimates: &[Point], truths: &[Point], los: &[bool]) -> Result<PositioningReport> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch(estimates.len(), truths.len()));
    }
    if los.len() != truths.len() {
        return Err(Error::LengthMismatch(truths.len(), los.len()));
    }
    if estimates.is_empty() {
        return Err(Error::DegenerateInput("no estimates to evaluate".into()));
    }
    let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| dist(e, t)).collect();
    let pick = |want: bool| -> Vec<f64> { errors.iter().zip(los).filter(|(_, l)| **l == want).map(|(e, _)| *e).collect() };
    Ok(PositioningReport {
        los: SubsetStats::from_errors(&pick(true)),
        nlos: SubsetStats::from_errors(&pick(false)),
        all: SubsetStats::from_errors(&errors),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartMetrics {
    pub ct: f64,
    pub tw: f64,
    pub ks: f64,
    pub k: usize,
}

/// Neighbourhood size used at a given sample count.
pub fn default_k(n: usize) -> usize {
    (n / 36).max(10)
}

/// Rank of every other point from each point (1 = nearest); ties broken by
/// index. `rank[i * n + j]`, zero on the diagonal.
fn ranks(d: &[f64], n: usize) -> Vec<usize> {
    let mut out = vec![0; n * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| d[i * n + a].total_cmp(&d[i * n + b]).then(a.cmp(&b)));
        for (r, &j) in order.iter().enumerate() {
            out[i * n + j] = r + 1;
        }
    }
    out
}

/// Continuity, trustworthiness and scale-fitted Kruskal stress between an
/// embedding and the ground truth, both given as dense `n x n` distance
/// matrices.
pub fn chart_metrics(emb: &[f64], truth: &[f64], k: usize) -> Result<ChartMetrics> {
    let n = (truth.len() as f64).sqrt().round() as usize;
    if n * n != truth.len() || emb.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: emb.len() });
    }
    if n < k + 2 {
        return Err(Error::DegenerateInput(format!("{n} points are too few for neighbourhood size {k}")));
    }
    let re = ranks(emb, n);
    let rt = ranks(truth, n);
    let (mut tw_sum, mut ct_sum) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (e, t) = (re[i * n + j], rt[i * n + j]);
            if e <= k && t > k {
                tw_sum += (t - k) as f64;
            }
            if t <= k && e > k {
                ct_sum += (e - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let norm = 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            num += emb[i * n + j] * truth[i * n + j];
            den += emb[i * n + j] * emb[i * n + j];
        }
    }
    let s = if den > 0.0 { num / den } else { 0.0 };
    let (mut err, mut tot) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            err += (s * emb[i * n + j] - truth[i * n + j]).powi(2);
            tot += truth[i * n + j].powi(2);
        }
    }
    Ok(ChartMetrics { ct: 1.0 - norm * ct_sum, tw: 1.0 - norm * tw_sum, ks: (err / tot).sqrt(), k })
}

pub fn distance_matrix(points: &[Point]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = dist(&points[i], &points[j]);
        }
    }
    d
}

/// Identification outcomes against the true visibility.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub los_as_los: usize,
    pub los_as_nlos: usize,
    pub nlos_as_los: usize,
    pub nlos_as_nlos: usize,
}

impl Confusion {
    pub fn from_masks(truth: &[bool], identified: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (t, i) in truth.iter().zip(identified) {
            match (t, i) {
                (true, true) => c.los_as_los += 1,
                (true, false) => c.los_as_nlos += 1,
                (false, true) => c.nlos_as_los += 1,
                (false, false) => c.nlos_as_nlos += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub positioning: PositioningReport,
    pub chart: Option<ChartMetrics>,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub subset: String,
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    pub e95: f64,
}

impl EvalReport {
    /// One CSV row per populated subset.
    pub fn rows(&self, axis: &str, value: f64, seed: u64) -> Vec<ReportRow> {
        let p = &self.positioning;
        [("los", &p.los), ("nlos", &p.nlos), ("all", &p.all)]
            .into_iter()
            .filter_map(|(name, s)| {
                s.as_ref().map(|s| ReportRow {
                    method: self.method.clone(),
                    axis: axis.to_string(),
                    value,
                    seed,
                    subset: name.to_string(),
                    count: s.count,
                    mae: s.mae,
                    rmse: s.rmse,
                    e95: s.e95,
                })
            })
            .collect()
    }
}

pub fn write_csv(path: &std::path::Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect()
    }

    #[test]
    fn positioning_examples() {
        let t = vec![[0.0, 0.0], [1.0, 1.0]];
        let r = positioning_metrics(&t, &t, &[true, false]).unwrap();
        let all = r.all.unwrap();
        assert_eq!((all.mae, all.rmse, all.e95), (0.0, 0.0, 0.0));
        let e = vec![[3.0, 0.0], [1.0, 5.0]];
        let all = positioning_metrics(&e, &t, &[true, true]).unwrap().all.unwrap();
        assert!((all.mae - 3.5).abs() < 1e-15 && (all.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(positioning_metrics(&e, &t[..1], &[true]).is_err());
        let r = positioning_metrics(&e, &t, &[true, true]).unwrap();
        assert!(r.nlos.is_none());
    }

    #[test]
    fn e95_of_uniform_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let errs: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..10.0)).collect();
        let s = SubsetStats::from_errors(&errs).unwrap();
        // Order-statistic oracle: the 950th of 1000 sorted values.
        let mut sorted = errs.clone();
        sorted.sort_by(f64::total_cmp);
        assert!((s.e95 - sorted[949]).abs() < 0.05);
        assert!((s.e95 - 9.5).abs() < 0.2);
        assert!(s.mae <= s.rmse && s.e95 >= s.median);
    }

    #[test]
    fn identity_and_scaled_embeddings() {
        let p = cloud(60, 2);
        let d = distance_matrix(&p);
        let m = chart_metrics(&d, &d, 10).unwrap();
        assert_eq!((m.ct, m.tw, m.ks), (1.0, 1.0, 0.0));
        let scaled: Vec<Point> = p.iter().map(|q| [2.0 * q[0], 2.0 * q[1]]).collect();
        let m = chart_metrics(&distance_matrix(&scaled), &d, 10).unwrap();
        assert_eq!((m.ct, m.tw), (1.0, 1.0));
        assert!(m.ks < 1e-12);
    }

    #[test]
    fn random_embedding_matches_shuffled_oracle() {
        let p = cloud(200, 3);
        let d = distance_matrix(&p);
        let r = cloud(200, 4);
        let m = chart_metrics(&distance_matrix(&r), &d, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut ct, mut tw) = (0.0, 0.0);
        for _ in 0..5 {
            let mut s = p.clone();
            s.shuffle(&mut rng);
            let o = chart_metrics(&distance_matrix(&s), &d, 10).unwrap();
            ct += o.ct / 5.0;
            tw += o.tw / 5.0;
        }
        assert!((m.ct - ct).abs() < 0.05 && (m.tw - tw).abs() < 0.05, "{m:?} vs {ct} {tw}");
    }

    #[test]
    fn rigid_motion_invariance() {
        let p = cloud(80, 6);
        let d = distance_matrix(&p);
        let emb: Vec<Point> = p.iter().map(|q| [q[0] + (q[1] * 0.05).sin() * 8.0, q[1]]).collect();
        let base = chart_metrics(&distance_matrix(&emb), &d, 10).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let moved: Vec<Point> = emb.iter().map(|q| [3.0 * (c * q[0] - s * q[1]) + 7.0, 3.0 * (s * q[0] + c * q[1]) - 2.0]).collect();
        let m = chart_metrics(&distance_matrix(&moved), &d, 10).unwrap();
        assert!((m.ct - base.ct).abs() < 1e-12 && (m.tw - base.tw).abs() < 1e-12 && (m.ks - base.ks).abs() < 1e-9);
    }
}
