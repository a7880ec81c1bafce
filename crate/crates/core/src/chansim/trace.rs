use nalgebra::Vector3;
use num_complex::Complex64;

use super::{Path, PathSet, PropagationConfig, SystemConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::scene::SceneMap;

const EPS: f64 = 1e-9;

/// A planar specular reflector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reflector {
    /// Vertical building facade on the plane `x[axis] = coord`, spanning
    /// `span` along the other horizontal axis and `[0, height]` vertically.
    /// `outward` is the sign of the facade normal along `axis`.
    Wall { axis: usize, coord: f64, span: (f64, f64), height: f64, outward: f64 },
    Ground,
}

impl Reflector {
    fn axis(&self) -> usize {
        match self {
            Reflector::Wall { axis, .. } => *axis,
            Reflector::Ground => 2,
        }
    }

    fn coord(&self) -> f64 {
        match self {
            Reflector::Wall { coord, .. } => *coord,
            Reflector::Ground => 0.0,
        }
    }

    fn outward(&self) -> f64 {
        match self {
            Reflector::Wall { outward, .. } => *outward,
            Reflector::Ground => 1.0,
        }
    }

    pub fn mirror(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut q = *p;
        let k = self.axis();
        q[k] = 2.0 * self.coord() - q[k];
        q
    }

    /// Strictly on the lit side of the reflector.
    fn in_front(&self, p: &Vector3<f64>) -> bool {
        (p[self.axis()] - self.coord()) * self.outward() > EPS
    }

    fn on_face(&self, p: &Vector3<f64>) -> bool {
        match self {
            Reflector::Wall { axis, span, height, .. } => {
                let other = 1 - axis;
                p[other] >= span.0 - EPS
                    && p[other] <= span.1 + EPS
                    && p.z >= -EPS
                    && p.z <= height + EPS
            }
            Reflector::Ground => true,
        }
    }

    /// Point where the segment `a -> b` crosses the reflector plane.
    fn crossing(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<Vector3<f64>> {
        let k = self.axis();
        let (da, db) = (a[k] - self.coord(), b[k] - self.coord());
        if da * db >= 0.0 {
            return None;
        }
        let t = da / (da - db);
        let mut p = a + (b - a) * t;
        p[k] = self.coord();
        Some(p)
    }
}

/// All facades of the scene's buildings plus, optionally, the ground.
pub fn reflectors(map: &SceneMap, ground: bool) -> Vec<Reflector> {
    let mut out = Vec::new();
    for b in &map.obstacles {
        let f = &b.footprint;
        for (axis, coord, outward) in [
            (0, f.min[0], -1.0),
            (0, f.max[0], 1.0),
            (1, f.min[1], -1.0),
            (1, f.max[1], 1.0),
        ] {
            let other = 1 - axis;
            out.push(Reflector::Wall {
                axis,
                coord,
                span: (f.min[other], f.max[other]),
                height: b.height,
                outward,
            });
        }
    }
    if ground {
        out.push(Reflector::Ground);
    }
    out
}

/// Geometric path through `seq` (ordered from the base station), if valid.
fn specular_path(
    map: &SceneMap,
    bs: &Vector3<f64>,
    user: &Vector3<f64>,
    seq: &[Reflector],
) -> Option<Vec<Vector3<f64>>> {
    let mut images = vec![*bs];
    for r in seq {
        let last = *images.last().unwrap();
        images.push(r.mirror(&last));
    }
    // Unfold backwards from the user.
    let mut points = vec![Vector3::zeros(); seq.len()];
    let mut target = *user;
    for k in (0..seq.len()).rev() {
        let r = &seq[k];
        let p = r.crossing(&images[k + 1], &target)?;
        if !r.on_face(&p) {
            return None;
        }
        points[k] = p;
        target = p;
    }
    let mut chain = Vec::with_capacity(seq.len() + 2);
    chain.push(*bs);
    chain.extend(points.iter().cloned());
    chain.push(*user);
    for (k, r) in seq.iter().enumerate() {
        if !r.in_front(&chain[k]) || !r.in_front(&chain[k + 2]) {
            return None;
        }
    }
    for w in chain.windows(2) {
        if (w[1] - w[0]).norm() < EPS || map.segment_blocked(&w[0], &w[1]) {
            return None;
        }
    }
    Some(chain)
}

fn make_path(cfg: &SystemConfig, prop: &PropagationConfig, chain: &[Vector3<f64>]) -> Path {
    let length: f64 = chain.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let tau = length / SPEED_OF_LIGHT;
    let bounces = (chain.len() - 2) as u8;
    let amp = prop.reflection_coeff.powi(bounces as i32) / (4.0 * std::f64::consts::PI * length);
    let beta = Complex64::from_polar(amp, -2.0 * std::f64::consts::PI * cfg.fc * tau);
    let first = chain[1] - chain[0];
    let theta = cfg.azimuth_of(&first.xy());
    Path {
        beta,
        theta,
        tau,
        bounces,
        validated: true,
        interactions: chain[1..chain.len() - 1].iter().map(|p| [p.x, p.y, p.z]).collect(),
    }
}

/// Enumerates the direct path and specular reflections up to `max_bounces`
/// between the base station and `p`.
pub fn trace_paths(
    map: &SceneMap,
    cfg: &SystemConfig,
    prop: &PropagationConfig,
    p: &Vector3<f64>,
) -> Result<PathSet> {
    let bs = map.bs();
    let mut chains: Vec<Vec<Vector3<f64>>> = Vec::new();
    if !map.segment_blocked(&bs, p) {
        chains.push(vec![bs, *p]);
    }
    let refl = reflectors(map, prop.ground_reflection);
    if prop.max_bounces >= 1 {
        for r in &refl {
            if let Some(c) = specular_path(map, &bs, p, std::slice::from_ref(r)) {
                chains.push(c);
            }
        }
    }
    if prop.max_bounces >= 2 {
        for (i, a) in refl.iter().enumerate() {
            for (j, b) in refl.iter().enumerate() {
                if i == j {
                    continue;
                }
                if let Some(c) = specular_path(map, &bs, p, &[*a, *b]) {
                    chains.push(c);
                }
            }
        }
    }
    if chains.is_empty() {
        return Err(Error::NoPaths { x: p.x, y: p.y });
    }
    let mut paths: Vec<Path> = chains.iter().map(|c| make_path(cfg, prop, c)).collect();
    let strongest = paths.iter().map(|p| p.beta.norm()).fold(0.0, f64::max);
    paths.retain(|p| p.beta.norm() >= prop.drop_ratio * strongest);
    paths.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    Ok(PathSet { paths })
}
