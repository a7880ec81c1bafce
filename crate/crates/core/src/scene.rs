//! Street-canyon map: the admissible user region, building obstacles, the
//! base-station position and the LoS/NLoS partition induced by them.
//!
//! Geometry is restricted to axis-aligned rectangles (streets, building
//! footprints) and rectangular prisms standing on the ground plane `z = 0`.
//! Users live on the plane `z = user_height`.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Closed axis-aligned rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: [x0.min(x1), y0.min(y1)],
            max: [x0.max(x1), y0.max(y1)],
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    fn interiors_overlap(&self, other: &Rect) -> bool {
        self.min[0] < other.max[0]
            && other.min[0] < self.max[0]
            && self.min[1] < other.max[1]
            && other.min[1] < self.max[1]
    }

    pub fn corners(&self) -> [Vector2<f64>; 4] {
        [
            Vector2::new(self.min[0], self.min[1]),
            Vector2::new(self.max[0], self.min[1]),
            Vector2::new(self.max[0], self.max[1]),
            Vector2::new(self.min[0], self.max[1]),
        ]
    }
}

/// A building: rectangular footprint extruded from the ground to `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub footprint: Rect,
    pub height: f64,
}

impl Building {
    /// Whether the open segment `a -> b` passes through the interior of the
    /// prism. Grazing contacts (a single touching point or a run along a
    /// face) do not count as blockage.
    pub fn blocks_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        let lo = [self.footprint.min[0], self.footprint.min[1], 0.0];
        let hi = [self.footprint.max[0], self.footprint.max[1], self.height];
        let mut t_enter = 0.0_f64;
        let mut t_exit = 1.0_f64;
        for k in 0..3 {
            let d = b[k] - a[k];
            if d.abs() < 1e-15 {
                if a[k] <= lo[k] || a[k] >= hi[k] {
                    return false;
                }
                continue;
            }
            let t0 = (lo[k] - a[k]) / d;
            let t1 = (hi[k] - a[k]) / d;
            let (t0, t1) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_exit - t_enter <= 1e-9 {
                return false;
            }
        }
        t_exit - t_enter > 1e-9
    }
}

/// Which side of the LoS partition a point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Visibility {
    Los,
    Nlos,
    OutsideRegion,
}

/// Restricts sampling and lattices to part of the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RegionFilter {
    #[default]
    All,
    Los,
    Nlos,
}

impl RegionFilter {
    pub fn admits(self, v: Visibility) -> bool {
        match (self, v) {
            (_, Visibility::OutsideRegion) => false,
            (RegionFilter::All, _) => true,
            (RegionFilter::Los, Visibility::Los) => true,
            (RegionFilter::Nlos, Visibility::Nlos) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMap {
    pub schema_version: u32,
    /// Disjoint street rectangles making up the admissible user region.
    pub region: Vec<Rect>,
    pub obstacles: Vec<Building>,
    pub bs_position: [f64; 3],
    pub user_height: f64,
}

impl SceneMap {
    pub fn new(
        region: Vec<Rect>,
        obstacles: Vec<Building>,
        bs_position: [f64; 3],
        user_height: f64,
    ) -> Result<Self> {
        let map = Self {
            schema_version: SCENE_SCHEMA_VERSION,
            region,
            obstacles,
            bs_position,
            user_height,
        };
        map.validate()?;
        Ok(map)
    }

    /// Default scene: a 100 m square plaza with four building blocks, lined
    /// on the west, north and east by tall facades. The base station sits
    /// above the rooftops just south of the plaza.
    pub fn default_scene() -> Self {
        let blocks = vec![
            Building { footprint: Rect::new(15.0, 15.0, 40.0, 40.0), height: 25.0 },
            Building { footprint: Rect::new(60.0, 15.0, 85.0, 40.0), height: 25.0 },
            Building { footprint: Rect::new(15.0, 60.0, 40.0, 85.0), height: 20.0 },
            Building { footprint: Rect::new(60.0, 60.0, 85.0, 85.0), height: 20.0 },
        ];
        let holes: Vec<Rect> = blocks.iter().map(|b| b.footprint).collect();
        let region = rect_difference(&Rect::new(0.0, 0.0, 100.0, 100.0), &holes);
        let mut obstacles = blocks;
        obstacles.extend([
            Building { footprint: Rect::new(-15.0, 100.0, 115.0, 115.0), height: 40.0 },
            Building { footprint: Rect::new(100.0, -10.0, 115.0, 100.0), height: 40.0 },
            Building { footprint: Rect::new(-15.0, -10.0, 0.0, 100.0), height: 40.0 },
        ]);
        Self::new(region, obstacles, [50.0, -10.0, 57.0], 1.5).expect("built-in scene is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported scene schema_version {}",
                self.schema_version
            )));
        }
        if self.region.is_empty() {
            return Err(Error::Config("scene region is empty".into()));
        }
        for (i, r) in self.region.iter().enumerate() {
            if !(r.area() > 0.0) {
                return Err(Error::Config(format!("region rectangle {i} has no area")));
            }
            for (j, s) in self.region.iter().enumerate().skip(i + 1) {
                if r.interiors_overlap(s) {
                    return Err(Error::Config(format!(
                        "region rectangles {i} and {j} overlap"
                    )));
                }
            }
        }
        let bs = self.bs();
        for (i, b) in self.obstacles.iter().enumerate() {
            if !(b.height > 0.0) || !(b.footprint.area() > 0.0) {
                return Err(Error::Config(format!("obstacle {i} is degenerate")));
            }
            if b.footprint.contains(bs.x, bs.y) && bs.z <= b.height {
                return Err(Error::Config(format!("base station lies inside obstacle {i}")));
            }
        }
        if !(self.user_height >= 0.0 && self.user_height < bs.z) {
            return Err(Error::Config(
                "user height must be non-negative and below the base station".into(),
            ));
        }
        Ok(())
    }

    pub fn bs(&self) -> Vector3<f64> {
        Vector3::from(self.bs_position)
    }

    /// Vertical gap between the base station and the user plane.
    pub fn height_gap(&self) -> f64 {
        self.bs_position[2] - self.user_height
    }

    pub fn in_region(&self, x: f64, y: f64) -> bool {
        self.region.iter().any(|r| r.contains(x, y))
    }

    pub fn region_area(&self) -> f64 {
        self.region.iter().map(Rect::area).sum()
    }

    /// Bounding box of the user region.
    pub fn bounds(&self) -> Rect {
        let mut b = self.region[0];
        for r in &self.region[1..] {
            b.min[0] = b.min[0].min(r.min[0]);
            b.min[1] = b.min[1].min(r.min[1]);
            b.max[0] = b.max[0].max(r.max[0]);
            b.max[1] = b.max[1].max(r.max[1]);
        }
        b
    }

    pub fn segment_blocked(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        self.obstacles.iter().any(|o| o.blocks_segment(a, b))
    }

    /// LoS iff the point is in the region and its segment to the base
    /// station crosses no building.
    pub fn classify_point(&self, p: &Vector3<f64>) -> Visibility {
        if !self.in_region(p.x, p.y) {
            return Visibility::OutsideRegion;
        }
        if self.segment_blocked(p, &self.bs()) {
            Visibility::Nlos
        } else {
            Visibility::Los
        }
    }

    /// Lifts a ground-plane point onto the user plane.
    pub fn on_user_plane(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(x, y, self.user_height)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: SceneMap = serde_json::from_str(&text)?;
        map.validate()?;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Splits `outer` minus the union of `holes` into disjoint rectangles
/// (row strips merged along x).
pub fn rect_difference(outer: &Rect, holes: &[Rect]) -> Vec<Rect> {
    let mut xs = vec![outer.min[0], outer.max[0]];
    let mut ys = vec![outer.min[1], outer.max[1]];
    for h in holes {
        xs.extend([h.min[0].clamp(outer.min[0], outer.max[0]), h.max[0].clamp(outer.min[0], outer.max[0])]);
        ys.extend([h.min[1].clamp(outer.min[1], outer.max[1]), h.max[1].clamp(outer.min[1], outer.max[1])]);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut out = Vec::new();
    for wy in ys.windows(2) {
        let cy = 0.5 * (wy[0] + wy[1]);
        let mut start: Option<f64> = None;
        for wx in xs.windows(2) {
            let cx = 0.5 * (wx[0] + wx[1]);
            let free = !holes.iter().any(|h| h.contains(cx, cy));
            match (free, start) {
                (true, None) => start = Some(wx[0]),
                (false, Some(x0)) => {
                    out.push(Rect::new(x0, wy[0], wx[0], wy[1]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(x0) = start {
            out.push(Rect::new(x0, wy[0], *xs.last().unwrap(), wy[1]));
        }
    }
    out
}

/// Convex polygon, counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    pub vertices: Vec<Vector2<f64>>,
}

impl ConvexPolygon {
    /// Convex hull (Andrew's monotone chain).
    pub fn hull(mut pts: Vec<Vector2<f64>>) -> Self {
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() < 3 {
            return Self { vertices: pts };
        }
        let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
            (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
        };
        let mut lower: Vec<Vector2<f64>> = Vec::new();
        for p in &pts {
            while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(*p);
        }
        let mut upper: Vec<Vector2<f64>> = Vec::new();
        for p in pts.iter().rev() {
            while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(*p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Self { vertices: lower }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
        })
    }
}

/// Explicit LoS/NLoS partition of the region.
///
/// Each building casts a convex shadow on the user plane as seen from the
/// base station; NLoS = region ∩ (union of shadows), LoS = region minus it.
/// Shadows of buildings taller than the antenna extend to infinity and are
/// truncated at [`SHADOW_REACH`] metres.
#[derive(Debug, Clone)]
pub struct RegionPartition {
    pub region: Vec<Rect>,
    pub shadows: Vec<ConvexPolygon>,
}

pub const SHADOW_REACH: f64 = 1.0e6;

impl RegionPartition {
    pub fn from_map(map: &SceneMap) -> Self {
        let bs = map.bs();
        let bs2 = bs.xy();
        let zu = map.user_height;
        let shadows = map
            .obstacles
            .iter()
            .filter(|b| b.height > zu)
            .map(|b| {
                let mut pts: Vec<Vector2<f64>> = b.footprint.corners().to_vec();
                for c in b.footprint.corners() {
                    if b.height < bs.z {
                        let t = (bs.z - zu) / (bs.z - b.height);
                        pts.push(bs2 + (c - bs2) * t);
                    } else {
                        let dir = c - bs2;
                        let norm = dir.norm().max(1e-12);
                        pts.push(c + dir / norm * SHADOW_REACH);
                    }
                }
                ConvexPolygon::hull(pts)
            })
            .collect();
        Self { region: map.region.clone(), shadows }
    }

    pub fn classify(&self, x: f64, y: f64) -> Visibility {
        if !self.region.iter().any(|r| r.contains(x, y)) {
            return Visibility::OutsideRegion;
        }
        let p = Vector2::new(x, y);
        if self.shadows.iter().any(|s| s.contains(&p)) {
            Visibility::Nlos
        } else {
            Visibility::Los
        }
    }
}

/// Prior density of user positions over the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UserPrior {
    #[default]
    Uniform,
    /// Piecewise-constant weights on a grid of square cells anchored at
    /// `origin`; row-major with `nx` cells along x. Weights need not be
    /// normalized and are zero outside the grid.
    Tabulated {
        origin: [f64; 2],
        spacing: f64,
        nx: usize,
        ny: usize,
        weights: Vec<f64>,
    },
}

impl UserPrior {
    /// Unnormalized weight at `(x, y)` (region membership not checked).
    pub fn weight(&self, x: f64, y: f64) -> f64 {
        match self {
            UserPrior::Uniform => 1.0,
            UserPrior::Tabulated { origin, spacing, nx, ny, weights } => {
                let i = ((x - origin[0]) / spacing).floor();
                let j = ((y - origin[1]) / spacing).floor();
                if i < 0.0 || j < 0.0 {
                    return 0.0;
                }
                let (i, j) = (i as usize, j as usize);
                if i >= *nx || j >= *ny {
                    return 0.0;
                }
                weights[j * nx + i].max(0.0)
            }
        }
    }

    fn max_weight(&self) -> f64 {
        match self {
            UserPrior::Uniform => 1.0,
            UserPrior::Tabulated { weights, .. } => weights.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let UserPrior::Tabulated { spacing, nx, ny, weights, .. } = self {
            if !(*spacing > 0.0) || weights.len() != nx * ny {
                return Err(Error::Config("tabulated prior has inconsistent shape".into()));
            }
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Config("tabulated prior weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Normalized prior together with its LoS/NLoS conditionals.
#[derive(Debug, Clone)]
pub struct PriorDensity {
    prior: UserPrior,
    partition: RegionPartition,
    mass_all: f64,
    mass_los: f64,
    mass_nlos: f64,
}

impl PriorDensity {
    /// Integrates the prior over the region and both sides of the partition
    /// with midpoint quadrature at `cell` metres.
    pub fn new(map: &SceneMap, prior: UserPrior, cell: f64) -> Result<Self> {
        prior.validate()?;
        let partition = RegionPartition::from_map(map);
        let (mut los, mut nlos) = (0.0, 0.0);
        for r in &map.region {
            let nx = (r.width() / cell).ceil().max(1.0) as usize;
            let ny = (r.height() / cell).ceil().max(1.0) as usize;
            let (dx, dy) = (r.width() / nx as f64, r.height() / ny as f64);
            for j in 0..ny {
                let y = r.min[1] + (j as f64 + 0.5) * dy;
                for i in 0..nx {
                    let x = r.min[0] + (i as f64 + 0.5) * dx;
                    let w = prior.weight(x, y) * dx * dy;
                    if w == 0.0 {
                        continue;
                    }
                    match partition.classify(x, y) {
                        Visibility::Los => los += w,
                        Visibility::Nlos => nlos += w,
                        Visibility::OutsideRegion => {}
                    }
                }
            }
        }
        if !(los + nlos > 0.0) {
            return Err(Error::EmptyRegion);
        }
        Ok(Self { prior, partition, mass_all: los + nlos, mass_los: los, mass_nlos: nlos })
    }

    pub fn prior(&self) -> &UserPrior {
        &self.prior
    }

    pub fn partition(&self) -> &RegionPartition {
        &self.partition
    }

    pub fn mass(&self, filter: RegionFilter) -> f64 {
        match filter {
            RegionFilter::All => self.mass_all,
            RegionFilter::Los => self.mass_los,
            RegionFilter::Nlos => self.mass_nlos,
        }
    }

    /// Density of `filter`-conditioned users at `(x, y)`; zero outside the
    /// filtered region.
    pub fn density(&self, x: f64, y: f64, filter: RegionFilter) -> f64 {
        let mass = self.mass(filter);
        if mass <= 0.0 || !filter.admits(self.partition.classify(x, y)) {
            return 0.0;
        }
        self.prior.weight(x, y) / mass
    }
}

/// Rejection-samples `n` user positions (on the user plane) from the prior
/// restricted to `filter`.
pub fn sample_positions(
    map: &SceneMap,
    prior: &UserPrior,
    n: usize,
    filter: RegionFilter,
    seed: u64,
) -> Result<Vec<Vector3<f64>>> {
    prior.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = map.region.iter().map(Rect::area).collect();
    let total: f64 = areas.iter().sum();
    let w_max = prior.max_weight();
    if !(w_max > 0.0) {
        return Err(Error::EmptyRegion);
    }
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if out.is_empty() && attempts > 200_000 {
            return Err(Error::EmptyRegion);
        }
        let mut pick = rng.random::<f64>() * total;
        let mut rect = &map.region[map.region.len() - 1];
        for (r, a) in map.region.iter().zip(&areas) {
            if pick < *a {
                rect = r;
                break;
            }
            pick -= a;
        }
        let x = rect.min[0] + rng.random::<f64>() * rect.width();
        let y = rect.min[1] + rng.random::<f64>() * rect.height();
        if rng.random::<f64>() * w_max >= prior.weight(x, y) {
            continue;
        }
        let p = map.on_user_plane(x, y);
        if filter.admits(map.classify_point(&p)) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Lattice points of pitch `spacing`, anchored at the lower-left corner of
/// the region's bounding box, that fall inside the filtered region.
pub fn grid_points(map: &SceneMap, spacing: f64, filter: RegionFilter) -> Vec<Vector3<f64>> {
    assert!(spacing > 0.0, "grid spacing must be positive");
    let b = map.bounds();
    let nx = (b.width() / spacing + 1e-9).floor() as usize;
    let ny = (b.height() / spacing + 1e-9).floor() as usize;
    let mut pts = Vec::new();
    for j in 0..=ny {
        let y = b.min[1] + j as f64 * spacing;
        for i in 0..=nx {
            let x = b.min[0] + i as f64 * spacing;
            let p = map.on_user_plane(x, y);
            if filter.admits(map.classify_point(&p)) {
                pts.push(p);
            }
        }
    }
    pts
}
