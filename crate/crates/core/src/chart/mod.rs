//! Neural channel charting: CSI features, the network, its losses and
//! training procedures, and the LoS/NLoS inference router.

mod features;
mod losses;
mod mlp;
mod train;

pub use features::{angle_delay, extract_features, FeatureConfig, LOG_FLOOR};
pub use losses::{loss_fingerprint, loss_los, loss_pairwise, loss_triplet, LossGrad, PAIR_FLOOR};
pub use mlp::{Adam, ForwardCache, Mlp, Scalar, BN_EPS, BN_MOMENTUM};
pub use train::{
    train_affine_cc, train_fingerprint, train_uniloc, train_unilocpro, StepRecord, TrainInputs, TrainOutcome,
    TrainTrace,
};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chansim::SystemConfig;
use crate::error::{Error, Result};
use crate::estimation::{analyze, Identifier, OmpEngine};
use crate::scene::SceneMap;
use crate::setmetrics::Point;

pub const DEFAULT_HIDDEN: [usize; 5] = [1024, 512, 256, 128, 64];
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ULM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    UniLocPro,
    UniLoc,
    Fingerprint,
    AffineCc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    /// Multiplicative step-size decay per epoch.
    pub lr_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::UniLocPro,
            lr: 1e-3,
            lr_decay: 0.97,
            batch: 128,
            epochs: 150,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("learning rate must be positive and decay in (0, 1]".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub c_cc: f64,
    pub pwd: f64,
    pub tri: f64,
    pub los: f64,
    pub ot: f64,
    /// Triplet margin (m).
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { c_cc: 1.0, pwd: 1.0, tri: 1.0, los: 1.0, ot: 1.0, gamma: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c_cc, self.pwd, self.tri, self.los, self.ot];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.tri > 0.0 && !(self.gamma > 0.0) {
            return Err(Error::Config("triplet margin must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed map from raw network outputs to meters: `offset + scale * y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputMap {
    pub offset: [f64; 2],
    pub scale: f64,
}

impl OutputMap {
    /// Centre and half-extent of the region's bounding box.
    pub fn for_scene(map: &SceneMap) -> Self {
        let b = map.bounds();
        let r = |x: f64| x as f32 as f64;
        OutputMap {
            offset: [r(0.5 * (b.min[0] + b.max[0])), r(0.5 * (b.min[1] + b.max[1]))],
            scale: r(0.5 * b.width().max(b.height())),
        }
    }

    pub fn apply(&self, y: [f64; 2]) -> Point {
        [self.offset[0] + self.scale * y[0], self.offset[1] + self.scale * y[1]]
    }
}

/// Affine correction `A e + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine {
    pub fn apply(&self, e: Point) -> Point {
        [
            self.a[0][0] * e[0] + self.a[0][1] * e[1] + self.b[0],
            self.a[1][0] * e[0] + self.a[1][1] * e[1] + self.b[1],
        ]
    }

    /// Rounded to single precision so that a checkpoint round trip is exact.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| x as f32 as f64;
        Affine { a: [[r(self.a[0][0]), r(self.a[0][1])], [r(self.a[1][0]), r(self.a[1][1])]], b: [r(self.b[0]), r(self.b[1])] }
    }
}

/// Least-squares affine map from embeddings onto reference positions.
pub fn fit_affine(emb: &[Point], refs: &[Point]) -> Result<Affine> {
    if emb.len() != refs.len() {
        return Err(Error::LengthMismatch(emb.len(), refs.len()));
    }
    let x = DMatrix::from_fn(emb.len(), 3, |i, k| if k < 2 { emb[i][k] } else { 1.0 });
    let svd = x.clone().svd(false, false);
    let sv = &svd.singular_values;
    if emb.len() < 3 || sv.min() <= 1e-10 * sv.max().max(1e-300) {
        return Err(Error::DegenerateGeometry);
    }
    let gram: Matrix3<f64> = (x.transpose() * &x).fixed_view::<3, 3>(0, 0).into();
    let chol = gram.cholesky().ok_or(Error::DegenerateGeometry)?;
    let mut rows = [[0.0; 3]; 2];
    for (k, row) in rows.iter_mut().enumerate() {
        let rhs: Vector3<f64> = (0..emb.len()).fold(Vector3::zeros(), |acc, i| acc + Vector3::new(emb[i][0], emb[i][1], 1.0) * refs[i][k]);
        let sol = chol.solve(&rhs);
        *row = [sol[0], sol[1], sol[2]];
    }
    Ok(Affine { a: [[rows[0][0], rows[0][1]], [rows[1][0], rows[1][1]]], b: [rows[0][2], rows[1][2]] })
}

/// A trained chart: network, output normalization and optional affine
/// correction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartModel {
    pub net: Mlp<f32>,
    pub output: OutputMap,
    pub affine: Option<Affine>,
}

impl ChartModel {
    pub fn new(net: Mlp<f32>, output: OutputMap) -> Self {
        ChartModel { net, output, affine: None }
    }

    /// Evaluation-mode positions (m) for a feature matrix.
    pub fn embed(&self, features: &Array2<f32>) -> Result<Vec<Point>> {
        let y = self.net.forward(features)?;
        Ok(y
            .rows()
            .into_iter()
            .map(|r| {
                let p = self.output.apply([r[0] as f64, r[1] as f64]);
                match &self.affine {
                    Some(a) => a.apply(p),
                    None => p,
                }
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.net.dims.len() as u32).to_le_bytes());
        for d in &self.net.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        let mut push = |v: f32| out.extend_from_slice(&v.to_le_bytes());
        for p in &self.net.params {
            p.iter().for_each(|v| push(*v));
        }
        for (m, v) in self.net.running_mean.iter().zip(&self.net.running_var) {
            m.iter().for_each(|x| push(*x));
            v.iter().for_each(|x| push(*x));
        }
        push(self.output.offset[0] as f32);
        push(self.output.offset[1] as f32);
        push(self.output.scale as f32);
        match &self.affine {
            Some(a) => {
                push(1.0);
                for v in [a.a[0][0], a.a[0][1], a.a[1][0], a.a[1][1], a.b[0], a.b[1]] {
                    push(v as f32);
                }
            }
            None => push(0.0),
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = || Error::Format("truncated or malformed checkpoint".into());
        if buf.len() < 8 || &buf[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a chart checkpoint".into()));
        }
        let mut pos = 4;
        let word = |pos: &mut usize| -> Result<u32> {
            let v = buf.get(*pos..*pos + 4).ok_or_else(bad)?;
            *pos += 4;
            Ok(u32::from_le_bytes(v.try_into().unwrap()))
        };
        let nd = word(&mut pos)? as usize;
        if !(2..=64).contains(&nd) {
            return Err(bad());
        }
        let dims: Vec<usize> = (0..nd).map(|_| word(&mut pos).map(|d| d as usize)).collect::<Result<_>>()?;
        let mut net = Mlp::<f32>::new(&dims, 0);
        let float = |pos: &mut usize| -> Result<f32> { Ok(f32::from_bits(word(pos)?)) };
        for p in net.params.iter_mut() {
            for v in p.iter_mut() {
                *v = float(&mut pos)?;
            }
        }
        for l in 0..net.running_mean.len() {
            for v in net.running_mean[l].iter_mut() {
                *v = float(&mut pos)?;
            }
            for v in net.running_var[l].iter_mut() {
                *v = float(&mut pos)?;
            }
        }
        let output = OutputMap {
            offset: [float(&mut pos)? as f64, float(&mut pos)? as f64],
            scale: float(&mut pos)? as f64,
        };
        let affine = if float(&mut pos)? == 1.0 {
            let v: Vec<f64> = (0..6).map(|_| float(&mut pos).map(|x| x as f64)).collect::<Result<_>>()?;
            Some(Affine { a: [[v[0], v[1]], [v[2], v[3]]], b: [v[4], v[5]] })
        } else {
            None
        };
        if pos != buf.len() {
            return Err(bad());
        }
        Ok(ChartModel { net, output, affine })
    }
}

pub fn features_matrix(rows: &[Vec<f64>]) -> Array2<f32> {
    let d = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), d), |(i, k)| rows[i][k] as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    ModelBased,
    Network,
}

/// Routes one CSI sample: identified-LoS users get the model-based
/// estimate, the rest the chart's output.
#[allow(clippy::too_many_arguments)]
pub fn infer(
    h: &DMatrix<Complex64>,
    id: u64,
    truth_los: bool,
    model: &ChartModel,
    features: &FeatureConfig,
    engine: &OmpEngine,
    identifier: &Identifier,
    map: &SceneMap,
    sys: &SystemConfig,
) -> Result<(Point, Branch)> {
    let mb = analyze(h, engine, map, sys)?;
    let p = mb.position();
    if identifier.identify(id, truth_los, &nalgebra::Vector3::new(p[0], p[1], p[2]), map) {
        return Ok(([p[0], p[1]], Branch::ModelBased));
    }
    let s = extract_features(h, sys, features)?;
    let out = model.embed(&features_matrix(&[s]))?;
    Ok((out[0], Branch::Network))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub branch: Branch,
}

pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in labels {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Identified-LoS samples keep their model-based estimate; identified-NLoS
/// samples take their transported label.
pub fn assemble_labels(ids: &[u64], anchors: &[Point], identified_los: &[bool], transported: &[Point]) -> Vec<LabelRecord> {
    let mut t = transported.iter();
    ids.iter()
        .zip(anchors)
        .zip(identified_los)
        .map(|((&id, a), &los)| {
            if los {
                LabelRecord { id, x: a[0], y: a[1], branch: Branch::ModelBased }
            } else {
                let p = t.next().expect("one transported label per identified-NLoS sample");
                LabelRecord { id, x: p[0], y: p[1], branch: Branch::Network }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_examples() {
        let e = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 3.0]];
        let a = fit_affine(&e, &e).unwrap();
        assert!((a.a[0][0] - 1.0).abs() < 1e-12 && a.a[0][1].abs() < 1e-12 && a.b[0].abs() < 1e-12);
        let r: Vec<Point> = e.iter().map(|p| [2.0 * p[0] + 1.0, 2.0 * p[1] + 1.0]).collect();
        let a = fit_affine(&e, &r).unwrap();
        for (p, q) in e.iter().zip(&r) {
            let z = a.apply(*p);
            assert!((z[0] - q[0]).abs() < 1e-12 && (z[1] - q[1]).abs() < 1e-12);
        }
        let line = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(fit_affine(&line, &line), Err(Error::DegenerateGeometry)));
    }

    #[test]
    fn affine_beats_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e: Vec<Point> = (0..30).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let r: Vec<Point> = e.iter().map(|p| [p[1] * 3.0 + rng.random_range(-1.0..1.0), -p[0] + 4.0]).collect();
        let sse = |f: &Affine| e.iter().zip(&r).map(|(p, q)| {
            let z = f.apply(*p);
            (z[0] - q[0]).powi(2) + (z[1] - q[1]).powi(2)
        }).sum::<f64>();
        let best = sse(&fit_affine(&e, &r).unwrap());
        for _ in 0..1000 {
            let mut v = || rng.random_range(-5.0..5.0);
            let f = Affine { a: [[v(), v()], [v(), v()]], b: [v(), v()] };
            assert!(best <= sse(&f));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::<f32>::new(&[6, 5, 4, 2], 3);
        let mut m = ChartModel::new(net, OutputMap { offset: [50.0, 50.0], scale: 50.0 });
        m.affine = Some(Affine { a: [[1.0, 0.5], [0.0, 2.0]], b: [0.25, -1.0] });
        let back = ChartModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert!(ChartModel::from_bytes(&m.to_bytes()[..20]).is_err());
    }

    #[test]
    fn label_file_round_trip() {
        let labels = assemble_labels(&[3, 4, 5], &[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], &[true, false, true], &[[9.0, 9.5]]);
        assert_eq!((labels[0].x, labels[0].y), (1.0, 2.0));
        assert_eq!(labels[1].branch, Branch::Network);
        assert_eq!((labels[1].x, labels[1].y), (9.0, 9.5));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
    }
}
