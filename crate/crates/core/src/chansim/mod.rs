//! Image-method multipath simulator and CSI synthesis.
//!
//! Propagation is traced between the base station and a user through up to
//! two specular reflections off building facades and the ground plane. The
//! resulting paths are turned into frequency-domain channel matrices with a
//! uniform linear array at the base station.

mod dataset;
mod trace;

pub use dataset::{
    dataset_at, generate_dataset, mix_seed, read_dataset, write_dataset, Dataset, ManifestEntry,
    TrajectoryConfig,
};
pub use trace::{trace_paths, Reflector};

use nalgebra::{DMatrix, Vector2, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Radio front-end and array parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Carrier frequency (Hz).
    pub fc: f64,
    /// Subcarrier spacing (Hz).
    pub delta_f: f64,
    pub n_subcarriers: usize,
    pub n_antennas: usize,
    /// Inter-antenna spacing (m).
    pub antenna_spacing: f64,
    /// Unit vector along the array; only its horizontal part is used.
    pub array_axis: [f64; 3],
    /// Per-entry complex noise standard deviation.
    pub noise_std: f64,
    /// When set, overrides `noise_std` per sample to hit this SNR (dB).
    #[serde(default)]
    pub snr_db: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl SystemConfig {
    /// Full-size array and numerology of the reference deployment.
    pub fn full_scale() -> Self {
        let fc = 10e9;
        let delta_f = 120e3;
        Self {
            fc,
            delta_f,
            n_subcarriers: (50e6 / delta_f) as usize,
            n_antennas: 256,
            antenna_spacing: SPEED_OF_LIGHT / fc / 2.0,
            array_axis: [0.0, 1.0, 0.0],
            noise_std: 0.0,
            snr_db: None,
        }
    }

    /// Reduced array and subcarrier count for single-core experiments. The
    /// bandwidth stays at 50 MHz; the array lies along x so that its
    /// broadside looks north into the default scene.
    pub fn desk() -> Self {
        let fc = 10e9;
        let n = 64;
        Self {
            fc,
            delta_f: 50e6 / n as f64,
            n_subcarriers: n,
            n_antennas: 32,
            antenna_spacing: SPEED_OF_LIGHT / fc / 2.0,
            array_axis: [-1.0, 0.0, 0.0],
            noise_std: 0.0,
            snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fc > 0.0 && self.delta_f > 0.0 && self.antenna_spacing > 0.0) {
            return Err(Error::Config("fc, delta_f and antenna spacing must be positive".into()));
        }
        if self.n_antennas == 0 || self.n_subcarriers == 0 {
            return Err(Error::Config("antenna and subcarrier counts must be >= 1".into()));
        }
        if self.axis_h().norm() < 1e-9 {
            return Err(Error::Config("array axis must have a horizontal component".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.fc
    }

    /// Unambiguous delay span `1 / delta_f` (s).
    pub fn max_delay(&self) -> f64 {
        1.0 / self.delta_f
    }

    /// Normalized horizontal array axis.
    pub fn axis_h(&self) -> Vector2<f64> {
        let v = Vector2::new(self.array_axis[0], self.array_axis[1]);
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            v
        }
    }

    /// Broadside direction: the array axis turned by -90 degrees.
    pub fn broadside(&self) -> Vector2<f64> {
        let a = self.axis_h();
        Vector2::new(a.y, -a.x)
    }

    /// Azimuth of a horizontal direction relative to broadside.
    pub fn azimuth_of(&self, dir: &Vector2<f64>) -> f64 {
        if dir.norm() < 1e-12 {
            return 0.0;
        }
        dir.dot(&self.axis_h()).atan2(dir.dot(&self.broadside()))
    }

    /// Horizontal unit direction for an azimuth relative to broadside.
    pub fn direction_of(&self, theta: f64) -> Vector2<f64> {
        self.broadside() * theta.cos() + self.axis_h() * theta.sin()
    }

    /// Array steering vector evaluated at `sin(theta)`.
    pub fn array_steering_sin(&self, sin_theta: f64) -> Vec<Complex64> {
        let k = 2.0 * std::f64::consts::PI * self.antenna_spacing / self.wavelength() * sin_theta;
        (0..self.n_antennas).map(|m| Complex64::from_polar(1.0, k * m as f64)).collect()
    }

    pub fn array_steering(&self, theta: f64) -> Vec<Complex64> {
        self.array_steering_sin(theta.sin())
    }

    /// Frequency-domain steering vector.
    pub fn delay_steering(&self, tau: f64) -> Vec<Complex64> {
        let k = -2.0 * std::f64::consts::PI * self.delta_f * tau;
        (0..self.n_subcarriers).map(|n| Complex64::from_polar(1.0, k * n as f64)).collect()
    }
}

/// Reflection and pruning settings for the tracer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Maximum number of specular bounces (0, 1 or 2).
    pub max_bounces: u8,
    /// Real amplitude reflection coefficient applied per bounce.
    pub reflection_coeff: f64,
    /// Paths weaker than this fraction of the strongest are dropped.
    pub drop_ratio: f64,
    /// Whether the ground plane acts as a reflector.
    pub ground_reflection: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { max_bounces: 2, reflection_coeff: 0.5, drop_ratio: 1e-4, ground_reflection: true }
    }
}

/// One propagation path as seen from the base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub beta: Complex64,
    /// Azimuth of arrival relative to broadside (rad).
    pub theta: f64,
    /// Time of arrival (s).
    pub tau: f64,
    pub bounces: u8,
    /// Every segment has been checked against the obstacles.
    pub validated: bool,
    /// Interaction points from the base station towards the user.
    pub interactions: Vec<[f64; 3]>,
}

impl Path {
    pub fn length(&self) -> f64 {
        self.tau * SPEED_OF_LIGHT
    }

    pub fn is_direct(&self) -> bool {
        self.bounces == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn direct(&self) -> Option<&Path> {
        self.paths.iter().find(|p| p.is_direct())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// A channel snapshot with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Csi {
    pub id: u64,
    /// `M x N_c` frequency-domain channel.
    pub h: DMatrix<Complex64>,
    pub position: Option<Vector3<f64>>,
    pub timestamp: Option<f64>,
    pub los: Option<bool>,
}

/// `H = sum_l beta_l a(theta_l) b(tau_l)^T`, plus circular Gaussian noise.
pub fn synthesize_csi(paths: &PathSet, cfg: &SystemConfig, seed: u64) -> Csi {
    let (m, n) = (cfg.n_antennas, cfg.n_subcarriers);
    let mut h = DMatrix::<Complex64>::zeros(m, n);
    for p in &paths.paths {
        let a = cfg.array_steering(p.theta);
        let b = cfg.delay_steering(p.tau);
        for j in 0..n {
            let bj = p.beta * b[j];
            for i in 0..m {
                h[(i, j)] += a[i] * bj;
            }
        }
    }
    let std = match cfg.snr_db {
        Some(snr) => {
            let power = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / (m * n) as f64;
            (power / 10f64.powf(snr / 10.0)).sqrt()
        }
        None => cfg.noise_std,
    };
    if std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std / std::f64::consts::SQRT_2).expect("finite std");
        for z in h.iter_mut() {
            *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Csi { id: 0, h, position: None, timestamp: None, los: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(beta: Complex64, theta: f64, tau: f64) -> Path {
        Path { beta, theta, tau, bounces: 0, validated: true, interactions: vec![] }
    }

    fn singular_values(h: &DMatrix<Complex64>) -> Vec<f64> {
        let mut s: Vec<f64> = h.clone().svd(false, false).singular_values.iter().cloned().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    #[test]
    fn unit_path_at_origin_is_all_ones() {
        let cfg = SystemConfig::desk();
        let ps = PathSet { paths: vec![single(Complex64::new(1.0, 0.0), 0.0, 0.0)] };
        let csi = synthesize_csi(&ps, &cfg, 0);
        assert!(csi.h.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn rank_follows_path_count() {
        let cfg = SystemConfig::desk();
        let one = PathSet { paths: vec![single(Complex64::new(0.3, 0.4), 0.2, 40e-9)] };
        let s = singular_values(&synthesize_csi(&one, &cfg, 0).h);
        assert!(s[1] < 1e-8 * s[0]);
        let two = PathSet {
            paths: vec![
                single(Complex64::new(0.3, 0.4), 0.2, 40e-9),
                single(Complex64::new(-0.1, 0.2), -0.5, 150e-9),
            ],
        };
        let s = singular_values(&synthesize_csi(&two, &cfg, 0).h);
        assert!(s[1] > 1e-3 * s[0]);
        assert!(s[2] < 1e-8 * s[0]);
    }

    #[test]
    fn synthesis_is_linear_in_gains() {
        let cfg = SystemConfig::desk();
        let b1 = Complex64::new(0.7, -0.2);
        let b2 = Complex64::new(-0.3, 0.9);
        let mk = |b| PathSet { paths: vec![single(b, 0.3, 75e-9)] };
        let sum = synthesize_csi(&mk(b1 + b2), &cfg, 0).h;
        let parts = synthesize_csi(&mk(b1), &cfg, 0).h + synthesize_csi(&mk(b2), &cfg, 0).h;
        assert!((sum - parts).norm() < 1e-12);
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = SystemConfig { noise_std: 0.1, ..SystemConfig::desk() };
        let ps = PathSet { paths: vec![single(Complex64::new(1.0, 0.0), 0.1, 10e-9)] };
        let a = synthesize_csi(&ps, &cfg, 5).h;
        let b = synthesize_csi(&ps, &cfg, 5).h;
        let c = synthesize_csi(&ps, &cfg, 6).h;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn snr_setting_scales_noise() {
        let cfg = SystemConfig { snr_db: Some(20.0), ..SystemConfig::desk() };
        let ps = PathSet { paths: vec![single(Complex64::new(1.0, 0.0), 0.1, 10e-9)] };
        let clean = synthesize_csi(&ps, &SystemConfig::desk(), 0).h;
        let noisy = synthesize_csi(&ps, &cfg, 3).h;
        let ratio = clean.norm_squared() / (noisy - &clean).norm_squared();
        assert!((10.0 * ratio.log10() - 20.0).abs() < 0.5);
    }

    #[test]
    fn azimuth_round_trip() {
        for cfg in [SystemConfig::full_scale(), SystemConfig::desk()] {
            for k in -8..=8 {
                let theta = k as f64 * 0.18;
                let back = cfg.azimuth_of(&cfg.direction_of(theta));
                assert!((back - theta).abs() < 1e-12);
            }
        }
        let cfg = SystemConfig::full_scale();
        assert!(cfg.azimuth_of(&Vector2::new(1.0, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn full_scale_numerology() {
        let cfg = SystemConfig::full_scale();
        assert_eq!(cfg.n_antennas, 256);
        assert_eq!(cfg.n_subcarriers, 416);
        assert!((cfg.antenna_spacing - cfg.wavelength() / 2.0).abs() < 1e-15);
    }
}
