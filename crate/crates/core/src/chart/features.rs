use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chansim::{SystemConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::scene::SceneMap;

pub const LOG_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)

/// Delay window kept after the angle-delay transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl FeatureConfig {
    /// Window from the shortest possible base-station range in the region
    /// to `excess` meters of extra path length beyond it.
    pub fn for_scene(map: &SceneMap, sys: &SystemConfig, excess: f64) -> Self {
        let b = map.bounds();
        let bs = map.bs();
        let cx = bs.x.clamp(b.min[0], b.max[0]);
        let cy = bs.y.clamp(b.min[1], b.max[1]);
        let near = ((bs.x - cx).powi(2) + (bs.y - cy).powi(2) + map.height_gap().powi(2)).sqrt();
        let step = 1.0 / (sys.n_subcarriers as f64 * sys.delta_f);
        let tau_min = ((near / SPEED_OF_LIGHT / step).floor() - 1.0).max(0.0) * step;
        let tau_max = (tau_min + excess / SPEED_OF_LIGHT).min(sys.max_delay());
        FeatureConfig { tau_min, tau_max }
    }

    pub fn validate(&self, sys: &SystemConfig) -> Result<()> {
        if !(0.0 <= self.tau_min && self.tau_min < self.tau_max && self.tau_max <= sys.max_delay() * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "feature window [{}, {}] must satisfy 0 <= tau_min < tau_max <= 1/delta_f",
                self.tau_min, self.tau_max
            )));
        }
        Ok(())
    }

    /// Half-open range of delay bins covered by the window.
    pub fn bins(&self, sys: &SystemConfig) -> (usize, usize) {
        let step = 1.0 / (sys.n_subcarriers as f64 * sys.delta_f);
        let lo = (self.tau_min / step + 1e-9).floor().max(0.0) as usize;
        let hi = ((self.tau_max / step - 1e-9).ceil() as usize).clamp(lo + 1, sys.n_subcarriers);
        (lo, hi)
    }

    pub fn dim(&self, sys: &SystemConfig) -> usize {
        let (lo, hi) = self.bins(sys);
        2 * sys.n_antennas * (hi - lo)
    }
}

/// Angle-delay transform of `h`: DFT across antennas, inverse DFT across
/// subcarriers.
pub fn angle_delay(h: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (m, n) = h.shape();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(n);
    let mut out = h.clone();
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..n {
        for i in 0..m {
            col[i] = out[(i, j)];
        }
        fwd.process(&mut col);
        for i in 0..m {
            out[(i, j)] = col[i];
        }
    }
    let mut row = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..m {
        for j in 0..n {
            row[j] = out[(i, j)];
        }
        inv.process(&mut row);
        for j in 0..n {
            out[(i, j)] = row[j];
        }
    }
    out
}

/// `[log|X|, arg X]` of the truncated angle-delay matrix, each block in
/// row-major (antenna, delay) order. Entries at the log floor get phase 0.
pub fn extract_features(h: &DMatrix<Complex64>, sys: &SystemConfig, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    cfg.validate(sys)?;
    if h.shape() != (sys.n_antennas, sys.n_subcarriers) {
        return Err(Error::DimensionMismatch { expected: sys.n_antennas * sys.n_subcarriers, got: h.len() });
    }
    let x = angle_delay(h);
    let (lo, hi) = cfg.bins(sys);
    let k = sys.n_antennas * (hi - lo);
    let mut s = vec![0.0; 2 * k];
    let mut idx = 0;
    for i in 0..sys.n_antennas {
        for j in lo..hi {
            let v = x[(i, j)];
            let lm = v.norm().ln();
            if lm > LOG_FLOOR {
                s[idx] = lm;
                s[k + idx] = v.arg();
            } else {
                s[idx] = LOG_FLOOR;
            }
            idx += 1;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SystemConfig {
        SystemConfig { n_antennas: 4, n_subcarriers: 16, delta_f: 1e6, ..SystemConfig::desk() }
    }

    #[test]
    fn feature_length() {
        let sys = toy();
        let step = 1.0 / 16e6;
        let cfg = FeatureConfig { tau_min: 3.0 * step, tau_max: 8.0 * step };
        assert_eq!(cfg.bins(&sys), (3, 8));
        let h = DMatrix::from_element(4, 16, Complex64::new(1.0, 0.0));
        assert_eq!(extract_features(&h, &sys, &cfg).unwrap().len(), 40);
        assert_eq!(cfg.dim(&sys), 40);
    }

    #[test]
    fn all_ones_concentrates_in_one_bin() {
        let sys = toy();
        let cfg = FeatureConfig { tau_min: 0.0, tau_max: sys.max_delay() };
        let h = DMatrix::from_element(4, 16, Complex64::new(1.0, 0.0));
        let s = extract_features(&h, &sys, &cfg).unwrap();
        let k = 4 * 16;
        // DFT of a constant: all energy at (0, 0); the inverse DFT here is
        // unnormalized, so the peak is M * N.
        assert!((s[0] - 64f64.ln()).abs() < 1e-12);
        assert!(s[1..k].iter().all(|v| *v == LOG_FLOOR));
        assert!(s[k + 1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_path_peaks_at_its_delay_bin() {
        let sys = toy();
        let cfg = FeatureConfig { tau_min: 0.0, tau_max: sys.max_delay() };
        let tau = 5.0 / 16e6;
        let b = sys.delay_steering(tau);
        let a = sys.array_steering_sin(0.0);
        let h = DMatrix::from_fn(4, 16, |i, j| a[i] * b[j]);
        let s = extract_features(&h, &sys, &cfg).unwrap();
        let best = (0..64).max_by(|x, y| s[*x].total_cmp(&s[*y])).unwrap();
        assert_eq!(best, 5);
        assert_eq!(s, extract_features(&h, &sys, &cfg).unwrap());
    }

    #[test]
    fn bad_window_rejected() {
        let sys = toy();
        let h = DMatrix::from_element(4, 16, Complex64::new(1.0, 0.0));
        assert!(extract_features(&h, &sys, &FeatureConfig { tau_min: 2e-6, tau_max: 1e-6 }).is_err());
    }
}
