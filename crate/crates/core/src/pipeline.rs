//! End-to-end orchestration: simulate train/test splits, run model-based
//! estimation and identification, train one of the charting methods and
//! evaluate it on the test split.

use std::path::PathBuf;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chansim::{dataset_at, generate_dataset, mix_seed, Dataset, PropagationConfig, SystemConfig, TrajectoryConfig};
use crate::chart::{
    assemble_labels, extract_features, features_matrix, train_affine_cc, train_fingerprint, train_uniloc, train_unilocpro,
    ChartModel, FeatureConfig, LabelRecord, LossWeights, OutputMap, TrainConfig, TrainInputs, TrainOutcome,
};
use crate::error::{Error, Result};
use crate::estimation::{analyze, Identifier, IdentifierMode, ModelBased, OmpConfig, OmpEngine};
use crate::evalsuite::{chart_metrics, default_k, distance_matrix, positioning_metrics, Confusion, EvalReport, ReportRow};
use crate::ot::{barycentric_labels, SinkhornConfig};
use crate::scene::{grid_points, RegionFilter, SceneMap, UserPrior};
use crate::setmetrics::{fused_matrix, mine_triplets_from_timestamps, DissimilarityMatrix, MetricParams, Point, TripletSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifierSettings {
    pub p_i: f64,
    pub map_override: bool,
    pub conservative: bool,
}

impl Default for IdentifierSettings {
    fn default() -> Self {
        IdentifierSettings { p_i: 1.0, map_override: true, conservative: false }
    }
}

impl IdentifierSettings {
    pub fn build(&self, seed: u64) -> Identifier {
        let mode = if self.conservative {
            IdentifierMode::Conservative
        } else {
            IdentifierMode::Oracle { p_i: self.p_i, map_override: self.map_override }
        };
        Identifier { mode, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Scene JSON; `None` uses the built-in plaza.
    pub scene: Option<PathBuf>,
    pub system: SystemConfig,
    pub propagation: PropagationConfig,
    pub prior: UserPrior,
    pub omp: OmpConfig,
    /// Explicit feature window; `None` derives one from the scene.
    pub features: Option<FeatureConfig>,
    /// Extra path length (m) covered by the derived feature window.
    pub feature_excess: f64,
    pub metrics: MetricParams,
    pub sinkhorn: SinkhornConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub identifier: IdentifierSettings,
    pub n_train: usize,
    pub n_test: usize,
    /// Timestamps (and so triplets) apply to the training split only.
    pub trajectory: TrajectoryConfig,
    /// Spacing (m) of the NLoS candidate grid used as transport targets.
    pub target_spacing: f64,
    /// Survey grid spacing (m) of the fingerprinting baseline.
    pub fingerprint_spacing: f64,
    pub triplet_cap: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let system = SystemConfig::desk();
        PipelineConfig {
            scene: None,
            omp: OmpConfig::for_system(&system),
            system,
            propagation: PropagationConfig::default(),
            prior: UserPrior::Uniform,
            features: None,
            feature_excess: 150.0,
            metrics: MetricParams::default(),
            sinkhorn: SinkhornConfig::default(),
            weights: LossWeights::default(),
            train: TrainConfig::default(),
            identifier: IdentifierSettings::default(),
            n_train: 600,
            n_test: 600,
            trajectory: TrajectoryConfig::default(),
            target_spacing: 0.5,
            fingerprint_spacing: 1.0,
            triplet_cap: crate::setmetrics::DEFAULT_PER_REFERENCE_CAP,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.prior.validate()?;
        self.omp.validate()?;
        self.metrics.validate()?;
        self.sinkhorn.validate()?;
        self.weights.validate()?;
        self.train.validate()?;
        self.identifier.build(0).validate()?;
        if let Some(f) = &self.features {
            f.validate(&self.system)?;
        }
        if self.n_train < 2 || self.n_test < 1 {
            return Err(Error::Config("need at least two training and one test sample".into()));
        }
        if !(self.target_spacing > 0.0) || !(self.fingerprint_spacing > 0.0) || !(self.feature_excess > 0.0) {
            return Err(Error::Config("grid spacings and feature excess must be positive".into()));
        }
        if !(self.trajectory.mu > 0.0) || !(self.trajectory.sigma_v >= 0.0) {
            return Err(Error::Config("trajectory speed must be positive with nonnegative spread".into()));
        }
        if self.triplet_cap == 0 {
            return Err(Error::Config("triplet_cap must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn scene_map(&self) -> Result<SceneMap> {
        match &self.scene {
            Some(p) => SceneMap::load(p),
            None => Ok(SceneMap::default_scene()),
        }
    }

    pub fn feature_config(&self, map: &SceneMap) -> FeatureConfig {
        self.features.unwrap_or_else(|| FeatureConfig::for_scene(map, &self.system, self.feature_excess))
    }

    /// Triplet thresholds (s): 10 m and 50 m of travel at the mean speed.
    pub fn triplet_bounds(&self) -> (f64, f64) {
        (10.0 / self.trajectory.mu, 50.0 / self.trajectory.mu)
    }

    pub fn train_seed(&self) -> u64 {
        mix_seed(self.seed, self.train.seed ^ 0x5EED)
    }

    pub fn split_seed(&self, split: Split) -> u64 {
        mix_seed(self.seed, split as u64 + 1)
    }

    pub fn identifier_for(&self, split: Split) -> Identifier {
        self.identifier.build(mix_seed(self.seed, split as u64 + 11))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train = 0,
    Test = 1,
}

/// One split with everything derived from its CSI.
pub struct SplitData {
    pub data: Dataset,
    pub mb: Vec<ModelBased>,
    /// Model-based estimates on the ground plane.
    pub anchors: Vec<Point>,
    pub truth: Vec<Point>,
    pub los: Vec<bool>,
    pub identified: Vec<bool>,
    pub features: Array2<f32>,
}

impl SplitData {
    pub fn build(data: Dataset, ctx: &Context, identifier: &Identifier) -> Result<Self> {
        let mb = analyze_split(&data, ctx)?;
        Self::from_estimates(data, mb, ctx, identifier)
    }

    /// Rebuilds a split from previously computed model-based estimates.
    pub fn from_estimates(data: Dataset, mb: Vec<ModelBased>, ctx: &Context, identifier: &Identifier) -> Result<Self> {
        if mb.len() != data.len() {
            return Err(Error::LengthMismatch(data.len(), mb.len()));
        }
        let sys = &ctx.cfg.system;
        let feats: Vec<Vec<f64>> =
            data.samples.par_iter().map(|s| extract_features(&s.h, sys, &ctx.features)).collect::<Result<_>>()?;
        let anchors: Vec<Point> = mb.iter().map(|m| [m.position()[0], m.position()[1]]).collect();
        let truth: Vec<Point> = data.positions().iter().map(|p| [p.x, p.y]).collect();
        let los = data.los_mask();
        let identified = data
            .samples
            .iter()
            .zip(&mb)
            .zip(&los)
            .map(|((s, m), &l)| {
                let p = m.position();
                identifier.identify(s.id, l, &Vector3::new(p[0], p[1], p[2]), &ctx.map)
            })
            .collect();
        Ok(SplitData { features: features_matrix(&feats), data, mb, anchors, truth, los, identified })
    }

    pub fn path_sets(&self) -> Vec<Vec<crate::estimation::PathEstimate>> {
        self.mb.iter().map(|m| m.paths.clone()).collect()
    }
}

/// Model-based analysis of every sample, in parallel.
pub fn analyze_split(data: &Dataset, ctx: &Context) -> Result<Vec<ModelBased>> {
    data.samples.par_iter().map(|s| analyze(&s.h, &ctx.engine, &ctx.map, &ctx.cfg.system)).collect()
}

/// Scene, estimator and feature window shared by every split.
pub struct Context {
    pub cfg: PipelineConfig,
    pub map: SceneMap,
    pub engine: OmpEngine,
    pub features: FeatureConfig,
    pub output: OutputMap,
}

impl Context {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let map = cfg.scene_map()?;
        let features = cfg.feature_config(&map);
        features.validate(&cfg.system)?;
        Ok(Context {
            engine: OmpEngine::new(&cfg.system, &cfg.omp)?,
            output: OutputMap::for_scene(&map),
            features,
            map,
            cfg: cfg.clone(),
        })
    }

    pub fn simulate(&self, split: Split) -> Result<Dataset> {
        let c = &self.cfg;
        let (n, traj) = match split {
            Split::Train => (c.n_train, c.trajectory.clone()),
            Split::Test => (c.n_test, TrajectoryConfig { with_timestamps: false, ..c.trajectory.clone() }),
        };
        generate_dataset(&self.map, &c.system, &c.propagation, &c.prior, n, &traj, c.split_seed(split))
    }

    /// Ground-plane NLoS candidate positions.
    pub fn targets(&self) -> Vec<Point> {
        grid_points(&self.map, self.cfg.target_spacing, RegionFilter::Nlos).iter().map(|p| [p.x, p.y]).collect()
    }
}

/// Fully prepared train/test data.
pub struct Prepared {
    pub ctx: Context,
    pub train: SplitData,
    pub test: SplitData,
    pub targets: Vec<Point>,
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let ctx = Context::new(cfg)?;
    let train = SplitData::build(ctx.simulate(Split::Train)?, &ctx, &cfg.identifier_for(Split::Train))?;
    let test = SplitData::build(ctx.simulate(Split::Test)?, &ctx, &cfg.identifier_for(Split::Test))?;
    Ok(Prepared::new(ctx, train, test))
}

impl Prepared {
    pub fn new(ctx: Context, train: SplitData, test: SplitData) -> Self {
        let targets = ctx.targets();
        Prepared { ctx, train, test, targets }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ModelBased,
    UniLocPro,
    UniLoc,
    Fingerprint,
    AffineCc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ModelBased => "model_based",
            Method::UniLocPro => "unilocpro",
            Method::UniLoc => "uniloc",
            Method::Fingerprint => "fingerprint",
            Method::AffineCc => "affine_cc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Method::ModelBased, Method::UniLocPro, Method::UniLoc, Method::Fingerprint, Method::AffineCc]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }

    pub fn needs_dissimilarity(self) -> bool {
        matches!(self, Method::UniLocPro | Method::AffineCc)
    }
}

impl Prepared {
    pub fn fused(&self) -> Result<DissimilarityMatrix> {
        fused_matrix(&self.train.path_sets(), &self.ctx.cfg.metrics)
    }

    /// Timestamp triplets of the training split, if it carries timestamps.
    pub fn triplets(&self) -> Option<TripletSet> {
        let t = self.train.data.timestamps()?;
        let (lo, hi) = self.ctx.cfg.triplet_bounds();
        Some(mine_triplets_from_timestamps(&t, lo, hi, self.ctx.cfg.triplet_cap, mix_seed(self.ctx.cfg.seed, 0x7719)))
    }

    /// Self-generated labels: model-based estimates for identified-LoS
    /// samples, one barycentric transport pass for the rest.
    pub fn self_labels(&self) -> Result<Vec<LabelRecord>> {
        let tr = &self.train;
        let sources: Vec<Point> = tr.anchors.iter().zip(&tr.identified).filter(|(_, l)| !**l).map(|(a, _)| *a).collect();
        let transported = if sources.is_empty() {
            Vec::new()
        } else {
            let m = (2 * sources.len()).min(self.targets.len());
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.ctx.cfg.seed, 0x1abe1));
            let sub: Vec<Point> =
                rand::seq::index::sample(&mut rng, self.targets.len(), m).into_iter().map(|k| self.targets[k]).collect();
            barycentric_labels(&sources, &sub, &self.ctx.cfg.sinkhorn)?
        };
        let ids: Vec<u64> = tr.data.samples.iter().map(|s| s.id).collect();
        Ok(assemble_labels(&ids, &tr.anchors, &tr.identified, &transported))
    }

    /// Survey-grid dataset for the fingerprinting baseline, capped at the
    /// training size.
    pub fn survey(&self) -> Result<SplitData> {
        let c = &self.ctx.cfg;
        let mut grid = grid_points(&self.ctx.map, c.fingerprint_spacing, RegionFilter::All);
        if grid.len() > c.n_train {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(c.seed, 0xF1));
            let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, grid.len(), c.n_train).into_vec();
            idx.sort_unstable();
            grid = idx.into_iter().map(|i| grid[i]).collect::<Vec<Vector3<f64>>>();
        }
        let data = dataset_at(&self.ctx.map, &c.system, &c.propagation, &grid, mix_seed(c.seed, 0xF2))?;
        SplitData::build(data, &self.ctx, &c.identifier_for(Split::Train))
    }

    fn weights(&self, triplets: Option<&TripletSet>) -> LossWeights {
        let w = self.ctx.cfg.weights;
        if triplets.is_none() {
            LossWeights { tri: 0.0, ..w }
        } else {
            w
        }
    }

    /// Trains `method`. UNILoc needs the self-generated labels.
    pub fn train_method(
        &self,
        method: Method,
        dissim: Option<&DissimilarityMatrix>,
        labels: Option<&[Point]>,
    ) -> Result<Option<TrainOutcome>> {
        let c = &self.ctx.cfg;
        let cfg = TrainConfig { seed: c.train_seed(), ..c.train.clone() };
        let triplets = self.triplets();
        let w = self.weights(triplets.as_ref());
        let tr = &self.train;
        let base = TrainInputs {
            features: &tr.features,
            anchors: &tr.anchors,
            identified_los: &tr.identified,
            dissim,
            triplets: triplets.as_ref(),
            labels: None,
            targets: &self.targets,
            output: self.ctx.output,
        };
        let out = match method {
            Method::ModelBased => return Ok(None),
            Method::UniLocPro => train_unilocpro(&base, &w, &c.sinkhorn, &cfg)?,
            Method::UniLoc => {
                let labels = labels.ok_or_else(|| {
                    Error::Config("UNILoc training needs self-generated labels; run the label step first".into())
                })?;
                train_uniloc(&TrainInputs { labels: Some(labels), ..base }, &w, &cfg)?
            }
            Method::Fingerprint => {
                let s = self.survey()?;
                let inp = TrainInputs {
                    features: &s.features,
                    anchors: &s.anchors,
                    identified_los: &s.identified,
                    dissim: None,
                    triplets: None,
                    labels: Some(&s.truth),
                    targets: &[],
                    output: self.ctx.output,
                };
                train_fingerprint(&inp, &cfg)?
            }
            Method::AffineCc => train_affine_cc(&TrainInputs { labels: Some(&tr.truth), ..base }, &w, &cfg)?,
        };
        Ok(Some(out))
    }

    /// Test-split positions: unified methods route identified-LoS users to
    /// the model-based estimate; baselines use the network for everyone.
    pub fn predict(&self, method: Method, model: Option<&ChartModel>) -> Result<Vec<Point>> {
        let te = &self.test;
        let net = |m: Option<&ChartModel>| -> Result<Vec<Point>> {
            m.ok_or_else(|| Error::Config(format!("method {} needs a trained model", method.name())))?.embed(&te.features)
        };
        Ok(match method {
            Method::ModelBased => te.anchors.clone(),
            Method::UniLocPro | Method::UniLoc => {
                let nn = net(model)?;
                te.identified.iter().zip(&te.anchors).zip(nn).map(|((l, a), n)| if *l { *a } else { n }).collect()
            }
            Method::Fingerprint | Method::AffineCc => net(model)?,
        })
    }

    pub fn evaluate(&self, method: Method, model: Option<&ChartModel>) -> Result<(Vec<Point>, EvalReport)> {
        let est = self.predict(method, model)?;
        let positioning = positioning_metrics(&est, &self.test.truth, &self.test.los)?;
        let chart = match model {
            Some(m) if self.train.truth.len() >= default_k(self.train.truth.len()) + 2 => {
                let emb = m.embed(&self.train.features)?;
                let k = default_k(emb.len());
                Some(chart_metrics(&distance_matrix(&emb), &distance_matrix(&self.train.truth), k)?)
            }
            _ => None,
        };
        let confusion = Confusion::from_masks(&self.test.los, &self.test.identified);
        Ok((est, EvalReport { method: method.name().into(), positioning, chart, confusion }))
    }

    /// Label generation, training and evaluation in one call.
    pub fn run_method(&self, method: Method, dissim: Option<&DissimilarityMatrix>) -> Result<MethodRun> {
        let labels: Option<Vec<Point>> = match method {
            Method::UniLoc => Some(self.self_labels()?.iter().map(|l| [l.x, l.y]).collect()),
            _ => None,
        };
        let outcome = self.train_method(method, dissim, labels.as_deref())?;
        let (estimates, report) = self.evaluate(method, outcome.as_ref().map(|o| &o.model))?;
        Ok(MethodRun { estimates, report, outcome })
    }
}

pub struct MethodRun {
    pub estimates: Vec<Point>,
    pub report: EvalReport,
    pub outcome: Option<TrainOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PI(Vec<f64>),
    SigmaV(Vec<f64>),
    DeltaS(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::PI(_) => "p_i",
            SweepAxis::SigmaV(_) => "sigma_v",
            SweepAxis::DeltaS(_) => "delta_s",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::PI(v) | SweepAxis::SigmaV(v) | SweepAxis::DeltaS(v) => v,
        }
    }

    /// Configuration at one grid value. A velocity sweep turns timestamps on.
    pub fn apply(&self, cfg: &PipelineConfig, value: f64) -> PipelineConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::PI(_) => c.identifier.p_i = value,
            SweepAxis::SigmaV(_) => {
                c.trajectory.sigma_v = value;
                c.trajectory.with_timestamps = true;
            }
            SweepAxis::DeltaS(_) => c.fingerprint_spacing = value,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub report: EvalReport,
}

impl SweepPoint {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.report.rows(&self.axis, self.value, self.seed)
    }
}

/// One report per grid value, seed and method.
pub fn sweep_runner(cfg: &PipelineConfig, axis: &SweepAxis, seeds: &[u64], methods: &[Method]) -> Result<Vec<SweepPoint>> {
    if axis.values().is_empty() || seeds.is_empty() || methods.is_empty() {
        return Err(Error::Config("sweep needs at least one value, seed and method".into()));
    }
    let jobs: Vec<(f64, u64)> = axis.values().iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let out: Vec<Vec<SweepPoint>> = jobs
        .par_iter()
        .map(|&(value, seed)| {
            let c = PipelineConfig { seed, ..axis.apply(cfg, value) };
            let prep = prepare(&c)?;
            let dissim = if methods.iter().any(|m| m.needs_dissimilarity()) { Some(prep.fused()?) } else { None };
            methods
                .iter()
                .map(|&m| {
                    let run = prep.run_method(m, dissim.as_ref())?;
                    Ok(SweepPoint { axis: axis.name().into(), value, seed, report: run.report })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}
