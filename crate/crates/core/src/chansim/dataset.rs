use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synthesize_csi, trace_paths, Csi, PropagationConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::scene::{sample_positions, RegionFilter, SceneMap, UserPrior, Visibility};

pub const DATASET_MAGIC: &[u8; 4] = b"ULC1";

/// Speed model for the trajectory used to stamp samples with times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Mean speed (m/s).
    pub mu: f64,
    /// Speed standard deviation (m/s).
    pub sigma_v: f64,
    pub with_timestamps: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { mu: 10.0, sigma_v: 0.0, with_timestamps: false }
    }
}

impl TrajectoryConfig {
    /// Lowest speed a segment may take; keeps travel times finite when the
    /// Gaussian draw is truncated at zero.
    pub fn speed_floor(&self) -> f64 {
        1e-3 * self.mu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemConfig,
    pub samples: Vec<Csi>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| s.position.expect("ground-truth position")).collect()
    }

    pub fn los_mask(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.los.unwrap_or(false)).collect()
    }

    pub fn timestamps(&self) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.timestamp).collect()
    }

    /// Subset by sample index, keeping ids.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            system: self.system.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Derives a per-item seed (splitmix64 finalizer over the pair).
pub fn mix_seed(seed: u64, id: u64) -> u64 {
    let mut z = seed ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Greedy nearest-neighbour tour starting from the first point.
pub fn nearest_neighbour_order(points: &[Vector3<f64>]) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return vec![];
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = 0;
    visited[0] = true;
    order.push(0);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, p) in points.iter().enumerate() {
            if !visited[j] {
                let d = (p - points[cur]).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        order.push(best);
        cur = best;
    }
    order
}

/// Timestamps along `order`: `t_0 = 0`, `t_k = t_{k-1} + |p_k - p_{k-1}| / v_k`
/// with `v_k = max(floor, N(mu, sigma_v^2))`. Returned per original index.
pub fn trajectory_timestamps(
    points: &[Vector3<f64>],
    order: &[usize],
    traj: &TrajectoryConfig,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(traj.mu, traj.sigma_v.max(0.0)).expect("finite speed model");
    let mut t = vec![0.0; points.len()];
    let mut now = 0.0;
    for w in order.windows(2) {
        let v = normal.sample(&mut rng).max(traj.speed_floor());
        now += (points[w[1]] - points[w[0]]).norm() / v;
        t[w[1]] = now;
    }
    t
}

/// Samples `n_users` positions from the prior, traces and synthesizes their
/// channels, and optionally stamps them along a trajectory.
///
/// Positions for which no propagation path survives are redrawn from a
/// derived seed so that every sample carries a nonzero channel.
pub fn generate_dataset(
    map: &SceneMap,
    system: &SystemConfig,
    prop: &PropagationConfig,
    prior: &UserPrior,
    n_users: usize,
    traj: &TrajectoryConfig,
    seed: u64,
) -> Result<Dataset> {
    system.validate()?;
    if traj.with_timestamps && n_users < 2 {
        return Err(Error::Config("a trajectory needs at least two users".into()));
    }
    let positions = sample_positions(map, prior, n_users, RegionFilter::All, seed)?;
    let traced: Vec<Result<(Vector3<f64>, super::PathSet)>> = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut p = *p;
            let mut attempt = 0u64;
            loop {
                match trace_paths(map, system, prop, &p) {
                    Ok(ps) => return Ok((p, ps)),
                    Err(Error::NoPaths { .. }) if attempt < 1000 => {
                        attempt += 1;
                        let s = mix_seed(mix_seed(seed, i as u64), attempt);
                        p = sample_positions(map, prior, 1, RegionFilter::All, s)?[0];
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let traced: Vec<(Vector3<f64>, super::PathSet)> = traced.into_iter().collect::<Result<_>>()?;
    let mut samples: Vec<Csi> = traced
        .par_iter()
        .enumerate()
        .map(|(i, (p, ps))| {
            let mut csi = synthesize_csi(ps, system, mix_seed(seed ^ 0xC51, i as u64));
            csi.id = i as u64;
            csi.position = Some(*p);
            csi.los = Some(map.classify_point(p) == Visibility::Los);
            csi
        })
        .collect();
    if traj.with_timestamps {
        let pts: Vec<Vector3<f64>> = traced.iter().map(|(p, _)| *p).collect();
        let order = nearest_neighbour_order(&pts);
        let t = trajectory_timestamps(&pts, &order, traj, mix_seed(seed, u64::MAX));
        for (s, ti) in samples.iter_mut().zip(t) {
            s.timestamp = Some(ti);
        }
    }
    Ok(Dataset { system: system.clone(), samples })
}

/// Channels at fixed positions (e.g. a fingerprinting survey grid).
/// Positions without any propagation path are skipped.
pub fn dataset_at(
    map: &SceneMap,
    system: &SystemConfig,
    prop: &PropagationConfig,
    positions: &[Vector3<f64>],
    seed: u64,
) -> Result<Dataset> {
    system.validate()?;
    let traced: Vec<Option<(Vector3<f64>, super::PathSet)>> = positions
        .par_iter()
        .map(|p| match trace_paths(map, system, prop, p) {
            Ok(ps) => Ok(Some((*p, ps))),
            Err(Error::NoPaths { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let samples = traced
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, (p, ps))| {
            let mut csi = synthesize_csi(&ps, system, mix_seed(seed ^ 0xC51, i as u64));
            csi.id = i as u64;
            csi.position = Some(p);
            csi.los = Some(map.classify_point(&p) == Visibility::Los);
            csi
        })
        .collect();
    Ok(Dataset { system: system.clone(), samples })
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub position: Option<[f64; 3]>,
    pub timestamp: Option<f64>,
    pub los: Option<bool>,
    /// Byte offset of this sample's matrix in the blob.
    pub offset: u64,
}

const HEADER_LEN: u64 = 16;

/// Writes the JSON-lines manifest and the little-endian `f32` blob.
pub fn write_dataset(ds: &Dataset, manifest: &FsPath, blob: &FsPath) -> Result<()> {
    let (m, n) = (ds.system.n_antennas, ds.system.n_subcarriers);
    let mut w = BufWriter::new(std::fs::File::create(blob)?);
    w.write_all(DATASET_MAGIC)?;
    for v in [m as u32, n as u32, ds.samples.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let stride = (m * n * 8) as u64;
    let mut mf = BufWriter::new(std::fs::File::create(manifest)?);
    for (k, s) in ds.samples.iter().enumerate() {
        if s.h.nrows() != m || s.h.ncols() != n {
            return Err(Error::DimensionMismatch { expected: m * n, got: s.h.len() });
        }
        for i in 0..m {
            for j in 0..n {
                let z = s.h[(i, j)];
                w.write_all(&(z.re as f32).to_le_bytes())?;
                w.write_all(&(z.im as f32).to_le_bytes())?;
            }
        }
        let entry = ManifestEntry {
            id: s.id,
            position: s.position.map(|p| [p.x, p.y, p.z]),
            timestamp: s.timestamp,
            los: s.los,
            offset: HEADER_LEN + k as u64 * stride,
        };
        serde_json::to_writer(&mut mf, &entry)?;
        mf.write_all(b"\n")?;
    }
    w.flush()?;
    mf.flush()?;
    Ok(())
}

pub fn read_dataset(manifest: &FsPath, blob: &FsPath, system: &SystemConfig) -> Result<Dataset> {
    let mut r = BufReader::new(std::fs::File::open(blob)?);
    let mut header = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut header)?;
    if &header[0..4] != DATASET_MAGIC {
        return Err(Error::Format("dataset blob has wrong magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (m, n, count) = (word(1), word(2), word(3));
    if m != system.n_antennas || n != system.n_subcarriers {
        return Err(Error::DimensionMismatch {
            expected: system.n_antennas * system.n_subcarriers,
            got: m * n,
        });
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let stride = m * n * 8;
    if data.len() != stride * count {
        return Err(Error::Format("dataset blob is truncated".into()));
    }
    let lines = BufReader::new(std::fs::File::open(manifest)?);
    let mut samples = Vec::with_capacity(count);
    for line in lines.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(&line)?;
        let start = (e.offset - HEADER_LEN) as usize;
        let chunk = data
            .get(start..start + stride)
            .ok_or_else(|| Error::Format(format!("sample {} offset out of range", e.id)))?;
        let f = |k: usize| f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let h = DMatrix::from_fn(m, n, |i, j| {
            let k = 2 * (i * n + j);
            Complex64::new(f(k), f(k + 1))
        });
        samples.push(Csi {
            id: e.id,
            h,
            position: e.position.map(Vector3::from),
            timestamp: e.timestamp,
            los: e.los,
        });
    }
    if samples.len() != count {
        return Err(Error::Format("manifest and blob disagree on sample count".into()));
    }
    Ok(Dataset { system: system.clone(), samples })
}
