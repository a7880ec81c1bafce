//! Model-based positioning: sparse channel-parameter recovery, shortest-path
//! selection, geometric position mapping and LoS/NLoS identification.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::chansim::{mix_seed, SystemConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::scene::{SceneMap, Visibility};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    None,
    LocalGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmpConfig {
    /// Points of the angle grid, uniform in `sin(theta)` over `[-1, 1)`.
    pub angle_grid: usize,
    /// Points of the delay grid, uniform over `[0, 1 / delta_f)`.
    pub delay_grid: usize,
    pub max_paths: usize,
    /// Stop once `|R|_F <= stop_ratio * |H|_F`.
    pub stop_ratio: f64,
    pub refinement: Refinement,
    /// Points per axis of the local refinement grid.
    pub refine_points: usize,
    /// Only atoms with `|beta| >= select_floor * max |beta|` compete in the
    /// shortest-path selection of the model-based chain.
    pub select_floor: f64,
}

impl OmpConfig {
    /// Two-times oversampled grids on both axes.
    pub fn for_system(sys: &SystemConfig) -> Self {
        Self {
            angle_grid: 2 * sys.n_antennas,
            delay_grid: 2 * sys.n_subcarriers,
            max_paths: 8,
            stop_ratio: 0.05,
            refinement: Refinement::LocalGrid,
            refine_points: 17,
            select_floor: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angle_grid < 2 || self.delay_grid < 2 {
            return Err(Error::Config("OMP grids need at least two points".into()));
        }
        if !(self.stop_ratio > 0.0 && self.stop_ratio < 1.0) {
            return Err(Error::Config("OMP stop ratio must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.select_floor) {
            return Err(Error::Config("selection floor must lie in [0, 1]".into()));
        }
        if self.max_paths == 0 || self.refine_points == 0 {
            return Err(Error::Config("OMP path cap and refine points must be >= 1".into()));
        }
        Ok(())
    }

    pub fn angle_step(&self) -> f64 {
        2.0 / self.angle_grid as f64
    }

    pub fn delay_step(&self, sys: &SystemConfig) -> f64 {
        sys.max_delay() / self.delay_grid as f64
    }
}

/// Recovered parameters of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub beta: Complex64,
    pub theta: f64,
    pub tau: f64,
}

/// A recovered path with its geometric surrogate position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub beta: Complex64,
    pub theta: f64,
    pub tau: f64,
    pub position: [f64; 3],
    /// The range was shorter than the height gap and had to be clamped.
    pub clamped: bool,
}

impl PathEstimate {
    pub fn xy(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpOutput {
    /// Sorted by ascending delay.
    pub params: Vec<ParamEstimate>,
    /// Residual Frobenius norm before the first and after every iteration.
    pub residual_history: Vec<f64>,
}

/// Reusable OMP solver bound to one system configuration.
pub struct OmpEngine {
    sys: SystemConfig,
    cfg: OmpConfig,
    delay_ifft: Arc<dyn Fft<f64>>,
    angle_fft: Option<Arc<dyn Fft<f64>>>,
    /// Conjugated angle atoms, `angle_grid x M`, when the FFT shortcut does
    /// not apply.
    angle_dict: Option<DMatrix<Complex64>>,
}

impl OmpEngine {
    pub fn new(sys: &SystemConfig, cfg: &OmpConfig) -> Result<Self> {
        sys.validate()?;
        cfg.validate()?;
        if cfg.delay_grid < sys.n_subcarriers {
            return Err(Error::Config("delay grid must not be coarser than the subcarrier count".into()));
        }
        let mut planner = FftPlanner::new();
        let delay_ifft = planner.plan_fft_inverse(cfg.delay_grid);
        let half_wave = (sys.antenna_spacing / sys.wavelength() - 0.5).abs() < 1e-12;
        let (angle_fft, angle_dict) = if half_wave && cfg.angle_grid >= sys.n_antennas {
            (Some(planner.plan_fft_forward(cfg.angle_grid)), None)
        } else {
            let step = cfg.angle_step();
            let dict = DMatrix::from_fn(cfg.angle_grid, sys.n_antennas, |g, m| {
                let s = -1.0 + g as f64 * step;
                sys.array_steering_sin(s)[m].conj()
            });
            (None, Some(dict))
        };
        Ok(Self { sys: sys.clone(), cfg: cfg.clone(), delay_ifft, angle_fft, angle_dict })
    }

    pub fn config(&self) -> &OmpConfig {
        &self.cfg
    }

    /// Correlation of `r` with every grid atom, `angle_grid x delay_grid`.
    fn correlate_grid(&self, r: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let (m, n) = (self.sys.n_antennas, self.sys.n_subcarriers);
        let (ga, gt) = (self.cfg.angle_grid, self.cfg.delay_grid);
        // Delay axis: sum_n R[m, n] exp(+j 2 pi n k / G_t).
        let mut y = DMatrix::<Complex64>::zeros(m, gt);
        let mut buf = vec![Complex64::new(0.0, 0.0); gt];
        for i in 0..m {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for j in 0..n {
                buf[j] = r[(i, j)];
            }
            self.delay_ifft.process(&mut buf);
            for k in 0..gt {
                y[(i, k)] = buf[k];
            }
        }
        match (&self.angle_fft, &self.angle_dict) {
            (Some(fft), _) => {
                // Angle axis with s_g = -1 + 2 g / G_a and d = lambda / 2:
                // conj(a_m(s_g)) = (-1)^m exp(-j 2 pi m g / G_a).
                let mut z = DMatrix::<Complex64>::zeros(ga, gt);
                let mut col = vec![Complex64::new(0.0, 0.0); ga];
                for k in 0..gt {
                    col.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    for i in 0..m {
                        col[i] = if i % 2 == 0 { y[(i, k)] } else { -y[(i, k)] };
                    }
                    fft.process(&mut col);
                    for g in 0..ga {
                        z[(g, k)] = col[g];
                    }
                }
                z
            }
            (None, Some(dict)) => dict * y,
            _ => unreachable!("engine always has an angle correlator"),
        }
    }

    fn correlate_at(&self, r: &DMatrix<Complex64>, s: f64, tau: f64) -> Complex64 {
        let a = self.sys.array_steering_sin(s);
        let b = self.sys.delay_steering(tau);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..r.nrows() {
            let mut row = Complex64::new(0.0, 0.0);
            for j in 0..r.ncols() {
                row += r[(i, j)] * b[j].conj();
            }
            acc += a[i].conj() * row;
        }
        acc
    }

    /// Best atom on a fine grid spanning one coarse cell around `(s0, tau0)`.
    fn refine(&self, r: &DMatrix<Complex64>, s0: f64, tau0: f64) -> (f64, f64) {
        let k = self.cfg.refine_points;
        if k < 2 {
            return (s0, tau0);
        }
        let ds = self.cfg.angle_step();
        let dt = self.cfg.delay_step(&self.sys);
        let offsets: Vec<f64> = (0..k).map(|i| -0.5 + i as f64 / (k - 1) as f64).collect();
        let (m, n) = (self.sys.n_antennas, self.sys.n_subcarriers);
        // v_t = R conj(b(tau_t)) for every candidate delay.
        let taus: Vec<f64> = offsets.iter().map(|o| tau0 + o * dt).collect();
        let mut v = DMatrix::<Complex64>::zeros(m, k);
        for (t, &tau) in taus.iter().enumerate() {
            let b = self.sys.delay_steering(tau);
            for i in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    acc += r[(i, j)] * b[j].conj();
                }
                v[(i, t)] = acc;
            }
        }
        let mut best = (s0, tau0, -1.0);
        for o in &offsets {
            let s = (s0 + o * ds).clamp(-1.0, 1.0);
            let a = self.sys.array_steering_sin(s);
            for (t, &tau) in taus.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    acc += a[i].conj() * v[(i, t)];
                }
                let p = acc.norm_sqr();
                if p > best.2 {
                    best = (s, tau, p);
                }
            }
        }
        (best.0, best.1)
    }

    pub fn estimate(&self, h: &DMatrix<Complex64>) -> Result<OmpOutput> {
        let (m, n) = (self.sys.n_antennas, self.sys.n_subcarriers);
        if h.nrows() != m || h.ncols() != n {
            return Err(Error::DimensionMismatch { expected: m * n, got: h.len() });
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::DegenerateInput("CSI has non-finite entries".into()));
        }
        let h_norm = h.norm();
        if h_norm == 0.0 {
            return Err(Error::DegenerateInput("CSI is identically zero".into()));
        }
        let period = self.sys.max_delay();
        let mut atoms: Vec<(f64, f64, Vec<Complex64>, Vec<Complex64>)> = Vec::new();
        let mut residual = h.clone();
        let mut history = vec![h_norm];
        let mut gains = DVector::<Complex64>::zeros(0);
        while atoms.len() < self.cfg.max_paths && *history.last().unwrap() > self.cfg.stop_ratio * h_norm {
            let corr = self.correlate_grid(&residual);
            let (mut bg, mut bk, mut bp) = (0, 0, -1.0);
            for k in 0..corr.ncols() {
                for g in 0..corr.nrows() {
                    let p = corr[(g, k)].norm_sqr();
                    if p > bp {
                        bp = p;
                        bg = g;
                        bk = k;
                    }
                }
            }
            let s0 = -1.0 + bg as f64 * self.cfg.angle_step();
            let tau0 = bk as f64 * self.cfg.delay_step(&self.sys);
            let (s, tau) = match self.cfg.refinement {
                Refinement::None => (s0, tau0),
                Refinement::LocalGrid => {
                    let (s, t) = self.refine(&residual, s0, tau0);
                    if self.correlate_at(&residual, s, t).norm_sqr() >= bp {
                        (s, t)
                    } else {
                        (s0, tau0)
                    }
                }
            };
            let tau = tau.rem_euclid(period);
            atoms.push((s, tau, self.sys.array_steering_sin(s), self.sys.delay_steering(tau)));
            // Least-squares refit of all gains on the selected atoms.
            let l = atoms.len();
            let gram = DMatrix::from_fn(l, l, |i, j| {
                let aa: Complex64 = atoms[i].2.iter().zip(&atoms[j].2).map(|(x, y)| x.conj() * y).sum();
                let bb: Complex64 = atoms[i].3.iter().zip(&atoms[j].3).map(|(x, y)| x.conj() * y).sum();
                aa * bb
            });
            let rhs = DVector::from_fn(l, |i, _| {
                let (a, b) = (&atoms[i].2, &atoms[i].3);
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..m {
                    let mut row = Complex64::new(0.0, 0.0);
                    for c in 0..n {
                        row += h[(r, c)] * b[c].conj();
                    }
                    acc += a[r].conj() * row;
                }
                acc
            });
            let Some(x) = gram.clone().lu().solve(&rhs) else {
                atoms.pop();
                break;
            };
            let mut model = DMatrix::<Complex64>::zeros(m, n);
            for (i, (_, _, a, b)) in atoms.iter().enumerate() {
                for c in 0..n {
                    let xb = x[i] * b[c];
                    for r in 0..m {
                        model[(r, c)] += a[r] * xb;
                    }
                }
            }
            let new_res = h - model;
            let norm = new_res.norm();
            if norm >= *history.last().unwrap() {
                atoms.pop();
                break;
            }
            residual = new_res;
            gains = x;
            history.push(norm);
        }
        let mut params: Vec<ParamEstimate> = atoms
            .iter()
            .zip(gains.iter())
            .map(|((s, tau, _, _), beta)| ParamEstimate { beta: *beta, theta: s.asin(), tau: *tau })
            .collect();
        params.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        Ok(OmpOutput { params, residual_history: history })
    }
}

/// Greedy sparse recovery over the angle x delay dictionary.
pub fn omp_estimate(h: &DMatrix<Complex64>, sys: &SystemConfig, cfg: &OmpConfig) -> Result<OmpOutput> {
    OmpEngine::new(sys, cfg)?.estimate(h)
}

/// Index of the earliest estimate; ties go to the stronger gain.
pub fn shortest_path_select<T: PathLike>(estimates: &[T]) -> Result<usize> {
    if estimates.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    let mut best = 0;
    for (i, e) in estimates.iter().enumerate().skip(1) {
        let b = &estimates[best];
        if e.tau() < b.tau() || (e.tau() == b.tau() && e.gain() > b.gain()) {
            best = i;
        }
    }
    Ok(best)
}

pub trait PathLike {
    fn tau(&self) -> f64;
    fn gain(&self) -> f64;
}

impl PathLike for ParamEstimate {
    fn tau(&self) -> f64 {
        self.tau
    }
    fn gain(&self) -> f64 {
        self.beta.norm()
    }
}

impl PathLike for PathEstimate {
    fn tau(&self) -> f64 {
        self.tau
    }
    fn gain(&self) -> f64 {
        self.beta.norm()
    }
}

/// Intersects the ray `(theta, c tau)` from the base station with the user
/// plane.
pub fn position_from_params(theta: f64, tau: f64, map: &SceneMap, sys: &SystemConfig) -> Result<Vector3<f64>> {
    let dz = map.height_gap().abs();
    let r = SPEED_OF_LIGHT * tau;
    if r < dz {
        return Err(Error::RangeTooShort { range: r, height_gap: dz });
    }
    Ok(place(theta, r, map, sys))
}

fn place(theta: f64, r: f64, map: &SceneMap, sys: &SystemConfig) -> Vector3<f64> {
    let dz = map.height_gap().abs();
    let rh = (r * r - dz * dz).max(0.0).sqrt();
    let bs = map.bs();
    let dir = sys.direction_of(theta);
    Vector3::new(bs.x + rh * dir.x, bs.y + rh * dir.y, map.user_height)
}

/// Like [`position_from_params`], but clamps a too-short range to the
/// height gap and reports whether it did.
pub fn position_from_params_clamped(
    theta: f64,
    tau: f64,
    map: &SceneMap,
    sys: &SystemConfig,
) -> (Vector3<f64>, bool) {
    match position_from_params(theta, tau, map, sys) {
        Ok(p) => (p, false),
        Err(_) => (place(theta, map.height_gap().abs(), map, sys), true),
    }
}

/// Attaches surrogate positions to recovered parameters.
pub fn locate_paths(params: &[ParamEstimate], map: &SceneMap, sys: &SystemConfig) -> Vec<PathEstimate> {
    params
        .iter()
        .map(|p| {
            let (pos, clamped) = position_from_params_clamped(p.theta, p.tau, map, sys);
            PathEstimate { beta: p.beta, theta: p.theta, tau: p.tau, position: [pos.x, pos.y, pos.z], clamped }
        })
        .collect()
}

/// Full per-sample model-based analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBased {
    pub paths: Vec<PathEstimate>,
    /// Index of the selected shortest path in `paths`.
    pub shortest: usize,
    pub residual_history: Vec<f64>,
}

impl ModelBased {
    pub fn position(&self) -> [f64; 3] {
        self.paths[self.shortest].position
    }

    pub fn clamped(&self) -> bool {
        self.paths[self.shortest].clamped
    }
}

pub fn analyze(h: &DMatrix<Complex64>, engine: &OmpEngine, map: &SceneMap, sys: &SystemConfig) -> Result<ModelBased> {
    let out = engine.estimate(h)?;
    let paths = locate_paths(&out.params, map, sys);
    let strongest = paths.iter().map(|p| p.beta.norm()).fold(0.0, f64::max);
    let floor = engine.config().select_floor * strongest;
    let candidates: Vec<usize> = (0..paths.len()).filter(|&i| paths[i].beta.norm() >= floor).collect();
    let picked: Vec<PathEstimate> = candidates.iter().map(|&i| paths[i]).collect();
    let shortest = candidates[shortest_path_select(&picked)?];
    Ok(ModelBased { paths, shortest, residual_history: out.residual_history })
}

/// `f_pe(f_ce^sh(H))`.
pub fn model_based_estimate(
    h: &DMatrix<Complex64>,
    map: &SceneMap,
    sys: &SystemConfig,
    cfg: &OmpConfig,
) -> Result<Vector3<f64>> {
    let engine = OmpEngine::new(sys, cfg)?;
    Ok(Vector3::from(analyze(h, &engine, map, sys)?.position()))
}

/// Diagonal of the position-space cell spanned by one angle and one delay
/// grid step at the location `p`.
pub fn position_grid_resolution(p: &Vector3<f64>, map: &SceneMap, sys: &SystemConfig, cfg: &OmpConfig) -> f64 {
    let bs = map.bs();
    let r = (p - bs).norm();
    let dz = map.height_gap().abs();
    let rh = (r * r - dz * dz).max(1e-9).sqrt();
    let dr_h = SPEED_OF_LIGHT * cfg.delay_step(sys) * r / rh;
    let dir = (p - bs).xy();
    let theta = sys.azimuth_of(&dir);
    let dtheta = cfg.angle_step() / theta.cos().abs().max(1e-3);
    (dr_h * dr_h + (rh * dtheta).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IdentifierMode {
    /// Ground truth flipped with probability `1 - p_i`; with `map_override`
    /// the decision is forced to NLoS whenever the model-based estimate lands
    /// in the NLoS region.
    Oracle { p_i: f64, map_override: bool },
    /// LoS iff the model-based estimate lands in the LoS region.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identifier {
    pub mode: IdentifierMode,
    pub seed: u64,
}

impl Default for Identifier {
    fn default() -> Self {
        Self { mode: IdentifierMode::Oracle { p_i: 1.0, map_override: true }, seed: 0 }
    }
}

impl Identifier {
    pub fn validate(&self) -> Result<()> {
        if let IdentifierMode::Oracle { p_i, .. } = self.mode {
            if !(0.5..=1.0).contains(&p_i) {
                return Err(Error::Config(format!("p_I = {p_i} outside [0.5, 1]")));
            }
        }
        Ok(())
    }

    /// The external identifier's raw decision `I(H)` for sample `id`.
    pub fn base_decision(&self, id: u64, truth_los: bool) -> bool {
        match self.mode {
            IdentifierMode::Oracle { p_i, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, id));
                if rng.random::<f64>() < p_i {
                    truth_los
                } else {
                    !truth_los
                }
            }
            IdentifierMode::Conservative => truth_los,
        }
    }

    /// Refined decision `I'(H)`; `true` means LoS.
    pub fn identify(&self, id: u64, truth_los: bool, p_mb: &Vector3<f64>, map: &SceneMap) -> bool {
        let side = map.classify_point(&map.on_user_plane(p_mb.x, p_mb.y));
        match self.mode {
            IdentifierMode::Oracle { map_override, .. } => {
                let base = self.base_decision(id, truth_los);
                if map_override && side == Visibility::Nlos {
                    false
                } else {
                    base
                }
            }
            IdentifierMode::Conservative => side == Visibility::Los,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{synthesize_csi, Path, PathSet};
    use crate::scene::Rect;

    fn path(beta: Complex64, theta: f64, tau: f64) -> Path {
        Path { beta, theta, tau, bounces: 0, validated: true, interactions: vec![] }
    }

    fn small_sys() -> SystemConfig {
        SystemConfig { n_antennas: 8, n_subcarriers: 16, delta_f: 50e6 / 16.0, ..SystemConfig::desk() }
    }

    #[test]
    fn on_grid_single_path_is_exact() {
        let sys = SystemConfig::desk();
        let cfg = OmpConfig::for_system(&sys);
        let s = -1.0 + 37.0 * cfg.angle_step();
        let tau = 21.0 * cfg.delay_step(&sys);
        let h = synthesize_csi(&PathSet { paths: vec![path(Complex64::new(1.0, 0.0), s.asin(), tau)] }, &sys, 0).h;
        let out = omp_estimate(&h, &sys, &cfg).unwrap();
        assert_eq!(out.params.len(), 1);
        let e = out.params[0];
        assert!((e.theta.sin() - s).abs() < 1e-12);
        assert!((e.tau - tau).abs() < 1e-18);
        assert!((e.beta - Complex64::new(1.0, 0.0)).norm() < 1e-6);
        assert!(*out.residual_history.last().unwrap() < 1e-6);
    }

    #[test]
    fn general_spacing_uses_direct_dictionary() {
        let sys = SystemConfig { antenna_spacing: 0.4 * SystemConfig::desk().wavelength(), ..small_sys() };
        let cfg = OmpConfig::for_system(&sys);
        let s = -1.0 + 5.0 * cfg.angle_step();
        let tau = 7.0 * cfg.delay_step(&sys);
        let h = synthesize_csi(&PathSet { paths: vec![path(Complex64::new(0.0, 2.0), s.asin(), tau)] }, &sys, 0).h;
        let out = omp_estimate(&h, &sys, &cfg).unwrap();
        assert!((out.params[0].theta.sin() - s).abs() < 1e-12);
        assert!((out.params[0].beta - Complex64::new(0.0, 2.0)).norm() < 1e-9);
    }

    #[test]
    fn zero_csi_is_rejected() {
        let sys = small_sys();
        let h = DMatrix::<Complex64>::zeros(8, 16);
        assert!(matches!(omp_estimate(&h, &sys, &OmpConfig::for_system(&sys)), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn shortest_path_tie_break() {
        let mk = |tau: f64, b: f64| ParamEstimate { beta: Complex64::new(b, 0.0), theta: 0.0, tau };
        assert_eq!(shortest_path_select(&[mk(3.0, 1.0), mk(1.0, 1.0), mk(2.0, 1.0)]).unwrap(), 1);
        assert_eq!(shortest_path_select(&[mk(1.0, 0.1), mk(1.0, 0.9)]).unwrap(), 1);
        assert_eq!(shortest_path_select(&[mk(5.0, 0.1)]).unwrap(), 0);
        assert!(matches!(shortest_path_select::<ParamEstimate>(&[]), Err(Error::EmptyEstimates)));
    }

    #[test]
    fn geometry_examples() {
        let map = SceneMap::new(vec![Rect::new(-50.0, -50.0, 50.0, 50.0)], vec![], [0.0, 0.0, 10.0], 0.0).unwrap();
        let sys = SystemConfig::full_scale();
        let tau = 10.0 * 2f64.sqrt() / SPEED_OF_LIGHT;
        let p = position_from_params(0.0, tau, &map, &sys).unwrap();
        assert!((p - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-9);
        let p = position_from_params(0.0, 10.0 / SPEED_OF_LIGHT, &map, &sys).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 0.0)).norm() < 1e-3);
        let err = position_from_params(0.3, 5.0 / SPEED_OF_LIGHT, &map, &sys);
        assert!(matches!(err, Err(Error::RangeTooShort { .. })));
        let (q, clamped) = position_from_params_clamped(0.3, 5.0 / SPEED_OF_LIGHT, &map, &sys);
        assert!(clamped);
        assert!(q.xy().norm() < 1e-12 && q.z == 0.0);
    }

    #[test]
    fn identifier_override_and_conservative() {
        let map = SceneMap::default_scene();
        let nlos_pt = crate::scene::grid_points(&map, 5.0, crate::scene::RegionFilter::Nlos)[0];
        let los_pt = crate::scene::grid_points(&map, 5.0, crate::scene::RegionFilter::Los)[0];
        let oracle = Identifier { mode: IdentifierMode::Oracle { p_i: 1.0, map_override: true }, seed: 1 };
        assert!(!oracle.identify(0, true, &nlos_pt, &map));
        assert!(oracle.identify(0, true, &los_pt, &map));
        let cons = Identifier { mode: IdentifierMode::Conservative, seed: 0 };
        assert!(cons.identify(0, false, &los_pt, &map));
        assert!(!cons.identify(0, true, &nlos_pt, &map));
        let raw = Identifier { mode: IdentifierMode::Oracle { p_i: 1.0, map_override: false }, seed: 1 };
        assert!(raw.identify(0, true, &nlos_pt, &map));
    }

    #[test]
    fn oracle_flip_rate_matches_accuracy() {
        let id = Identifier { mode: IdentifierMode::Oracle { p_i: 0.8, map_override: false }, seed: 9 };
        let hits = (0..5000).filter(|&i| id.base_decision(i, true)).count() as f64 / 5000.0;
        assert!((hits - 0.8).abs() < 0.02, "{hits}");
        assert!(Identifier { mode: IdentifierMode::Oracle { p_i: 0.4, map_override: true }, seed: 0 }
            .validate()
            .is_err());
    }
}
