use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{loss_fingerprint, loss_los, loss_pairwise, loss_triplet, LossGrad};
use super::mlp::{Adam, Mlp};
use super::{fit_affine, ChartModel, LossWeights, OutputMap, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::ot::{ot_loss, SinkhornConfig};
use crate::setmetrics::{DissimilarityMatrix, Point, TripletSet};

/// Everything a training run may draw on; which fields are required
/// depends on the mode.
pub struct TrainInputs<'a> {
    pub features: &'a Array2<f32>,
    /// Model-based position estimates (ground plane).
    pub anchors: &'a [Point],
    pub identified_los: &'a [bool],
    pub dissim: Option<&'a DissimilarityMatrix>,
    pub triplets: Option<&'a TripletSet>,
    /// Regression targets: self-generated labels or ground truth.
    pub labels: Option<&'a [Point]>,
    /// Candidate transport targets covering the NLoS region.
    pub targets: &'a [Point],
    /// Output normalization of the chart.
    pub output: OutputMap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub total: f64,
    pub pwd: f64,
    pub tri: f64,
    pub los: f64,
    pub ot: f64,
    pub fp: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<StepRecord>,
    pub epoch_seconds: Vec<f64>,
}

pub struct TrainOutcome {
    pub model: ChartModel,
    pub trace: TrainTrace,
}

fn add_scaled(acc: &mut [Point], part: &LossGrad, w: f64) {
    if w == 0.0 {
        return;
    }
    for (a, g) in acc.iter_mut().zip(&part.grad) {
        a[0] += w * g[0];
        a[1] += w * g[1];
    }
}

fn check_inputs(inp: &TrainInputs, cfg: &TrainConfig, w: &LossWeights) -> Result<()> {
    cfg.validate()?;
    w.validate()?;
    let n = inp.features.nrows();
    if n < 2 {
        return Err(Error::DegenerateInput("training needs at least two samples".into()));
    }
    for len in [inp.anchors.len(), inp.identified_los.len()] {
        if len != n {
            return Err(Error::LengthMismatch(n, len));
        }
    }
    if let Some(l) = inp.labels {
        if l.len() != n {
            return Err(Error::LengthMismatch(n, l.len()));
        }
    }
    if let Some(d) = inp.dissim {
        if d.n != n {
            return Err(Error::DimensionMismatch { expected: n, got: d.n });
        }
    }
    if w.tri > 0.0 && inp.triplets.is_none() {
        return Err(Error::Config("triplet weight is positive but no triplets were supplied".into()));
    }
    match cfg.mode {
        TrainMode::UniLocPro | TrainMode::AffineCc if inp.dissim.is_none() => {
            Err(Error::Config("this training mode needs a dissimilarity matrix".into()))
        }
        TrainMode::UniLoc | TrainMode::Fingerprint | TrainMode::AffineCc if inp.labels.is_none() => {
            Err(Error::Config("this training mode needs per-sample labels".into()))
        }
        TrainMode::UniLocPro if inp.targets.is_empty() && w.ot > 0.0 => {
            Err(Error::Config("transport loss needs target points".into()))
        }
        _ => Ok(()),
    }
}

/// Mini-batches for one epoch. With triplets, a quarter of each batch is
/// spent on the members of freshly drawn triplets.
fn epoch_batches(
    n: usize,
    batch: usize,
    triplets: Option<&TripletSet>,
    trip_cursor: &mut Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Vec<(usize, usize, usize)>)> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let b = batch.min(n);
    let steps = n.div_ceil(b);
    let per_trip = match triplets {
        Some(t) if !t.is_empty() => (b / 12).max(1),
        _ => 0,
    };
    let fill = b - (3 * per_trip).min(b.saturating_sub(2));
    let mut out = Vec::with_capacity(steps);
    let mut pos = 0;
    for _ in 0..steps {
        let mut idx: Vec<usize> = Vec::with_capacity(b);
        let mut local = Vec::new();
        if let Some(t) = triplets.filter(|_| per_trip > 0) {
            for _ in 0..per_trip {
                if trip_cursor.is_empty() {
                    *trip_cursor = (0..t.len()).collect();
                    trip_cursor.shuffle(rng);
                }
                let q = t.triplets[trip_cursor.pop().unwrap()];
                let base = idx.len();
                idx.extend([q.reference, q.positive, q.negative]);
                local.push((base, base + 1, base + 2));
            }
        }
        for _ in 0..fill {
            if pos == n {
                break;
            }
            idx.push(perm[pos]);
            pos += 1;
        }
        if idx.len() >= 2 {
            out.push((idx, local));
        }
    }
    out
}

/// Shared training loop; `objective` maps batch indices and embeddings (in
/// meters) to a step record and per-embedding gradients.
fn run<F>(inp: &TrainInputs, cfg: &TrainConfig, mut objective: F) -> Result<(Mlp<f32>, TrainTrace)>
where
    F: FnMut(&[usize], &[(usize, usize, usize)], &[Point], &mut ChaCha8Rng) -> Result<(StepRecord, Vec<Point>)>,
{
    let n = inp.features.nrows();
    let mut dims = vec![inp.features.ncols()];
    dims.extend(&cfg.hidden);
    dims.push(2);
    let mut net = Mlp::<f32>::new(&dims, cfg.seed);
    let mut opt = Adam::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e);
    let mut trip_cursor = Vec::new();
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        for (idx, local) in epoch_batches(n, cfg.batch, inp.triplets, &mut trip_cursor, &mut rng) {
            let x = inp.features.select(Axis(0), &idx);
            let (y, cache) = net.forward_train(&x)?;
            let emb: Vec<Point> = y.rows().into_iter().map(|r| inp.output.apply([r[0] as f64, r[1] as f64])).collect();
            let (mut rec, grad) = objective(&idx, &local, &emb, &mut rng)?;
            rec.epoch = epoch;
            if !rec.total.is_finite() {
                return Err(Error::DegenerateInput(format!("training loss became {} at epoch {epoch}", rec.total)));
            }
            let s = inp.output.scale;
            let dy = Array2::from_shape_fn((idx.len(), 2), |(i, k)| (grad[i][k] * s) as f32);
            let grads = net.backward(&cache, &dy);
            opt.step(&mut net, &grads, lr);
            trace.steps.push(rec);
        }
        trace.epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok((net, trace))
}

fn anchors_of(inp: &TrainInputs, idx: &[usize]) -> (Vec<Point>, Vec<bool>) {
    (idx.iter().map(|&i| inp.anchors[i]).collect(), idx.iter().map(|&i| inp.identified_los[i]).collect())
}

/// Charting with pairwise, triplet, LoS-anchor and transport losses.
pub fn train_unilocpro(
    inp: &TrainInputs,
    w: &LossWeights,
    sinkhorn: &SinkhornConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig { mode: TrainMode::UniLocPro, ..cfg.clone() };
    check_inputs(inp, &cfg, w)?;
    let d = inp.dissim.unwrap();
    let (net, trace) = run(inp, &cfg, |idx, local, emb, rng| {
        let mut grad = vec![[0.0; 2]; emb.len()];
        let mut rec = StepRecord::default();
        if w.pwd > 0.0 {
            let l = loss_pairwise(emb, &d.submatrix(idx));
            rec.pwd = l.value;
            add_scaled(&mut grad, &l, w.c_cc * w.pwd);
        }
        if w.tri > 0.0 {
            let l = loss_triplet(emb, local, w.gamma);
            rec.tri = l.value;
            add_scaled(&mut grad, &l, w.c_cc * w.tri);
        }
        let (anchors, mask) = anchors_of(inp, idx);
        if w.los > 0.0 {
            let l = loss_los(emb, &anchors, &mask);
            rec.los = l.value;
            add_scaled(&mut grad, &l, w.los);
        }
        let nlos: Vec<usize> = (0..emb.len()).filter(|&i| !mask[i]).collect();
        if w.ot > 0.0 && !nlos.is_empty() {
            let pts: Vec<Point> = nlos.iter().map(|&i| emb[i]).collect();
            let m = (2 * nlos.len()).min(inp.targets.len());
            let tsub: Vec<Point> = rand::seq::index::sample(rng, inp.targets.len(), m)
                .into_iter()
                .map(|k| inp.targets[k])
                .collect();
            let l = ot_loss(&pts, &tsub, sinkhorn)?;
            rec.ot = l.value;
            for (k, &i) in nlos.iter().enumerate() {
                grad[i][0] += w.ot * l.grad[k][0];
                grad[i][1] += w.ot * l.grad[k][1];
            }
        }
        rec.total = w.c_cc * (w.pwd * rec.pwd + w.tri * rec.tri) + w.los * rec.los + w.ot * rec.ot;
        Ok((rec, grad))
    })?;
    Ok(TrainOutcome { model: ChartModel::new(net, inp.output), trace })
}

fn supervised(inp: &TrainInputs, w: &LossWeights, cfg: &TrainConfig) -> Result<(Mlp<f32>, TrainTrace)> {
    check_inputs(inp, cfg, w)?;
    let labels = inp.labels.unwrap();
    run(inp, cfg, |idx, local, emb, _| {
        let target: Vec<Point> = idx.iter().map(|&i| labels[i]).collect();
        let fp = loss_fingerprint(emb, &target);
        let mut grad = fp.grad.clone();
        let mut rec = StepRecord { fp: fp.value, ..Default::default() };
        if w.tri > 0.0 {
            let l = loss_triplet(emb, local, w.gamma);
            rec.tri = l.value;
            add_scaled(&mut grad, &l, w.tri);
        }
        rec.total = rec.fp + w.tri * rec.tri;
        Ok((rec, grad))
    })
}

/// Regression on self-generated labels with an optional triplet term.
pub fn train_uniloc(inp: &TrainInputs, w: &LossWeights, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig { mode: TrainMode::UniLoc, ..cfg.clone() };
    let (net, trace) = supervised(inp, w, &cfg)?;
    Ok(TrainOutcome { model: ChartModel::new(net, inp.output), trace })
}

/// Regression on ground-truth positions.
pub fn train_fingerprint(inp: &TrainInputs, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig { mode: TrainMode::Fingerprint, ..cfg.clone() };
    let w = LossWeights { tri: 0.0, ..Default::default() };
    let unlabeled = TrainInputs { triplets: None, ..*inp };
    let (net, trace) = supervised(&unlabeled, &w, &cfg)?;
    Ok(TrainOutcome { model: ChartModel::new(net, inp.output), trace })
}

/// Unsupervised chart from the pairwise (and optional triplet) loss, then
/// the least-squares affine map onto the reference positions in `labels`.
pub fn train_affine_cc(inp: &TrainInputs, w: &LossWeights, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig { mode: TrainMode::AffineCc, ..cfg.clone() };
    check_inputs(inp, &cfg, w)?;
    let d = inp.dissim.unwrap();
    let (net, trace) = run(inp, &cfg, |idx, local, emb, _| {
        let mut grad = vec![[0.0; 2]; emb.len()];
        let mut rec = StepRecord::default();
        let l = loss_pairwise(emb, &d.submatrix(idx));
        rec.pwd = l.value;
        add_scaled(&mut grad, &l, w.pwd);
        if w.tri > 0.0 {
            let l = loss_triplet(emb, local, w.gamma);
            rec.tri = l.value;
            add_scaled(&mut grad, &l, w.tri);
        }
        rec.total = w.pwd * rec.pwd + w.tri * rec.tri;
        Ok((rec, grad))
    })?;
    let mut model = ChartModel::new(net, inp.output);
    let emb = model.embed(inp.features)?;
    model.affine = Some(fit_affine(&emb, inp.labels.unwrap())?.rounded());
    Ok(TrainOutcome { model, trace })
}
