//! Scene layouts: static and scripted moving box obstacles with occupancy,
//! signed-distance, and bounding-box queries.

use crate::geom::{Aabb, Vec2};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_CELL_SIZE: f64 = 0.1;
/// Distance clamp for the signed-distance grid; keeps obstacle-free scenes finite.
pub const SDF_CLAMP: f64 = 10.0;

/// Piecewise-linear motion script for one obstacle: waypoint times strictly
/// increasing; positions clamp to the nearest endpoint outside the time span.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObstacleScript {
    pub waypoints: Vec<(f64, Vec2)>,
}

impl ObstacleScript {
    pub fn position_at(&self, t: f64) -> Vec2 {
        let wp = &self.waypoints;
        if t <= wp[0].0 {
            return wp[0].1;
        }
        if t >= wp[wp.len() - 1].0 {
            return wp[wp.len() - 1].1;
        }
        for w in wp.windows(2) {
            let (t0, p0) = w[0];
            let (t1, p1) = w[1];
            if t <= t1 {
                let u = (t - t0) / (t1 - t0);
                return p0 + (p1 - p0) * u;
            }
        }
        wp[wp.len() - 1].1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MovingObstacle {
    pub extents: Vec2,
    pub script: ObstacleScript,
}

impl MovingObstacle {
    pub fn box_at(&self, t: f64) -> Aabb {
        Aabb::from_center_extents(self.script.position_at(t), self.extents)
    }
}

/// A validated scene: bounds rectangle, grid resolution, and obstacle lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMap {
    pub bounds: Aabb,
    pub cell_size: f64,
    pub static_obstacles: Vec<Aabb>,
    pub moving_obstacles: Vec<MovingObstacle>,
    pub walkable_margin: f64,
}

/// On-disk scene schema.
#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    bounds: [f64; 4],
    #[serde(default = "default_cell")]
    cell_size: f64,
    #[serde(rename = "static", default)]
    static_boxes: Vec<BoxSpec>,
    #[serde(default)]
    moving: Vec<MovingSpec>,
    #[serde(default)]
    walkable_margin: f64,
}

fn default_cell() -> f64 {
    DEFAULT_CELL_SIZE
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxSpec {
    center: [f64; 2],
    extents: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct MovingSpec {
    extents: [f64; 2],
    waypoints: Vec<WaypointSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WaypointSpec {
    t: f64,
    center: [f64; 2],
}

impl SceneMap {
    pub fn new(bounds: Aabb, cell_size: f64) -> Self {
        SceneMap {
            bounds,
            cell_size,
            static_obstacles: Vec::new(),
            moving_obstacles: Vec::new(),
            walkable_margin: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bounds;
        if !(b.min.is_finite() && b.max.is_finite() && b.max.x > b.min.x && b.max.y > b.min.y) {
            return Err(Error::Validation(format!("degenerate scene bounds {b:?}")));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Validation(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        for (i, ob) in self.static_obstacles.iter().enumerate() {
            if !(ob.max.x > ob.min.x && ob.max.y > ob.min.y) {
                return Err(Error::Validation(format!("static obstacle {i} has non-positive extents")));
            }
            if !ob.intersects(&b) {
                return Err(Error::Validation(format!("static obstacle {i} lies outside bounds")));
            }
        }
        for (i, mv) in self.moving_obstacles.iter().enumerate() {
            if !(mv.extents.x > 0.0 && mv.extents.y > 0.0) {
                return Err(Error::Validation(format!("moving obstacle {i} has non-positive extents")));
            }
            let wp = &mv.script.waypoints;
            if wp.is_empty() {
                return Err(Error::Validation(format!("moving obstacle {i} has no waypoints")));
            }
            for w in wp.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::Validation(format!(
                        "moving obstacle {i}: waypoint times not strictly increasing ({} then {})",
                        w[0].0, w[1].0
                    )));
                }
            }
            for (k, &(_, p)) in wp.iter().enumerate() {
                if !Aabb::from_center_extents(p, mv.extents).intersects(&b) {
                    return Err(Error::Validation(format!(
                        "moving obstacle {i} waypoint {k} lies outside bounds"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SceneMap> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<SceneMap> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: String::new(),
            detail: format!("{e} (line {}, column {})", e.line(), e.column()),
        })?;
        let [xmin, ymin, xmax, ymax] = file.bounds;
        let map = SceneMap {
            bounds: Aabb::new(Vec2::new(xmin, ymin), Vec2::new(xmax, ymax)),
            cell_size: file.cell_size,
            static_obstacles: file
                .static_boxes
                .iter()
                .map(|b| {
                    Aabb::from_center_extents(
                        Vec2::new(b.center[0], b.center[1]),
                        Vec2::new(b.extents[0], b.extents[1]),
                    )
                })
                .collect(),
            moving_obstacles: file
                .moving
                .iter()
                .map(|m| MovingObstacle {
                    extents: Vec2::new(m.extents[0], m.extents[1]),
                    script: ObstacleScript {
                        waypoints: m
                            .waypoints
                            .iter()
                            .map(|w| (w.t, Vec2::new(w.center[0], w.center[1])))
                            .collect(),
                    },
                })
                .collect(),
            walkable_margin: file.walkable_margin,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        let file = SceneFile {
            bounds: [self.bounds.min.x, self.bounds.min.y, self.bounds.max.x, self.bounds.max.y],
            cell_size: self.cell_size,
            static_boxes: self
                .static_obstacles
                .iter()
                .map(|b| BoxSpec {
                    center: [b.center().x, b.center().y],
                    extents: [b.extents().x, b.extents().y],
                })
                .collect(),
            moving: self
                .moving_obstacles
                .iter()
                .map(|m| MovingSpec {
                    extents: [m.extents.x, m.extents.y],
                    waypoints: m
                        .script
                        .waypoints
                        .iter()
                        .map(|&(t, p)| WaypointSpec { t, center: [p.x, p.y] })
                        .collect(),
                })
                .collect(),
            walkable_margin: self.walkable_margin,
        };
        serde_json::to_string(&file).expect("scene serialization")
    }

    /// All obstacle boxes at time `t`: statics first, then interpolated movers.
    pub fn obstacles_at(&self, t: f64) -> Vec<Aabb> {
        let mut out = self.static_obstacles.clone();
        out.extend(self.moving_obstacles.iter().map(|m| m.box_at(t)));
        out
    }

    /// Point is inside bounds and clear of every (margin-inflated) obstacle.
    pub fn walkable(&self, p: Vec2, t: f64) -> bool {
        self.bounds.contains(p)
            && !self
                .obstacles_at(t)
                .iter()
                .any(|b| b.inflated(self.walkable_margin).contains(p))
    }

    pub fn rasterize(&self, t: f64) -> OccupancyGrid {
        OccupancyGrid::rasterize(self.bounds, self.cell_size, &self.obstacles_at(t))
    }
}

fn grid_dim(extent: f64, cell: f64) -> usize {
    ((extent / cell) - 1e-9).ceil().max(1.0) as usize
}

/// Boolean floor grid; `true` marks a non-walkable cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Vec2,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn rasterize(bounds: Aabb, cell_size: f64, boxes: &[Aabb]) -> OccupancyGrid {
        let ext = bounds.extents();
        let nx = grid_dim(ext.x, cell_size);
        let ny = grid_dim(ext.y, cell_size);
        let mut cells = vec![false; nx * ny];
        for b in boxes {
            // Only the cell range overlapping the box needs testing.
            let i0 = (((b.min.x - bounds.min.x) / cell_size - 0.5).floor()).max(0.0) as usize;
            let j0 = (((b.min.y - bounds.min.y) / cell_size - 0.5).floor()).max(0.0) as usize;
            let i1 = ((((b.max.x - bounds.min.x) / cell_size - 0.5).ceil()) as isize).min(nx as isize - 1);
            let j1 = ((((b.max.y - bounds.min.y) / cell_size - 0.5).ceil()) as isize).min(ny as isize - 1);
            if i1 < 0 || j1 < 0 {
                continue;
            }
            for j in j0..=(j1 as usize) {
                for i in i0..=(i1 as usize) {
                    let c = Vec2::new(
                        bounds.min.x + (i as f64 + 0.5) * cell_size,
                        bounds.min.y + (j as f64 + 0.5) * cell_size,
                    );
                    if b.contains(c) {
                        cells[j * nx + i] = true;
                    }
                }
            }
        }
        OccupancyGrid {
            origin: bounds.min,
            cell_size,
            nx,
            ny,
            cells,
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (i as f64 + 0.5) * self.cell_size,
            self.origin.y + (j as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.nx + i]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Count non-walkable cell centers inside `bbox` (closed). Area outside the
    /// grid counts as non-walkable, so the virtual lattice extends past bounds.
    pub fn nonwalkable_in_bbox(&self, bbox: &Aabb) -> usize {
        let lo_i = ((bbox.min.x - self.origin.x) / self.cell_size - 0.5).ceil() as i64;
        let hi_i = ((bbox.max.x - self.origin.x) / self.cell_size - 0.5).floor() as i64;
        let lo_j = ((bbox.min.y - self.origin.y) / self.cell_size - 0.5).ceil() as i64;
        let hi_j = ((bbox.max.y - self.origin.y) / self.cell_size - 0.5).floor() as i64;
        let mut count = 0usize;
        for j in lo_j..=hi_j {
            for i in lo_i..=hi_i {
                let inside_grid =
                    i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny;
                if !inside_grid || self.occupied(i as usize, j as usize) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Signed distances at cell centers: negative inside obstacles, clamped to
/// ±`SDF_CLAMP`. Magnitude is the distance to the nearest opposite-occupancy
/// cell center minus half a cell, which references the value to the obstacle
/// surface: it overestimates the exact distance to the rasterized boundary by
/// at most (√2−1)/2 of a cell and never underestimates it.
#[derive(Debug, Clone)]
pub struct SdfGrid {
    pub origin: Vec2,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

// Finite sentinel for "no site in this row/grid"; far above any real squared
// cell distance, and safe in the parabola-intersection arithmetic below.
const EDT_INF: f64 = 1e12;

/// 1D squared-distance transform (lower envelope of parabolas), one row.
/// All inputs are finite (sites 0, non-sites `EDT_INF`), so every parabola
/// intersection is finite and the k = 0 sentinel z[0] = −∞ stops the envelope
/// pruning.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut j = 0usize;
    for q in 0..n {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Squared Euclidean distance (in cell units) from every cell to the nearest
/// cell where `site` is true.
fn edt_2d(nx: usize, ny: usize, site: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let mut g = vec![EDT_INF; nx * ny];
    // Column pass.
    let mut f = vec![0.0; ny.max(nx)];
    let mut d = vec![0.0; ny.max(nx)];
    let mut v = vec![0usize; ny.max(nx)];
    let mut z = vec![0.0; ny.max(nx) + 1];
    for i in 0..nx {
        for j in 0..ny {
            f[j] = if site(i, j) { 0.0 } else { EDT_INF };
        }
        edt_1d(&f[..ny], &mut d[..ny], &mut v[..ny], &mut z[..ny + 1]);
        for j in 0..ny {
            g[j * nx + i] = d[j];
        }
    }
    // Row pass.
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            f[i] = g[j * nx + i];
        }
        edt_1d(&f[..nx], &mut d[..nx], &mut v[..nx], &mut z[..nx + 1]);
        out[j * nx..(j + 1) * nx].copy_from_slice(&d[..nx]);
    }
    out
}

impl SdfGrid {
    pub fn build(grid: &OccupancyGrid) -> Result<SdfGrid> {
        Self::build_clamped(grid, SDF_CLAMP)
    }

    pub fn build_clamped(grid: &OccupancyGrid, clamp: f64) -> Result<SdfGrid> {
        let (nx, ny) = (grid.nx, grid.ny);
        if grid.cells.iter().all(|&c| c) {
            return Err(Error::Validation("grid has no walkable cells".into()));
        }
        let to_occ = edt_2d(nx, ny, |i, j| grid.occupied(i, j));
        let to_free = edt_2d(nx, ny, |i, j| !grid.occupied(i, j));
        let cs = grid.cell_size;
        let values = (0..nx * ny)
            .map(|idx| {
                if grid.cells[idx] {
                    -(((to_free[idx].sqrt() - 0.5) * cs).min(clamp))
                } else {
                    ((to_occ[idx].sqrt() - 0.5) * cs).min(clamp)
                }
            })
            .collect();
        Ok(SdfGrid {
            origin: grid.origin,
            cell_size: grid.cell_size,
            nx,
            ny,
            values,
        })
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    fn bounds(&self) -> Aabb {
        Aabb::new(
            self.origin,
            Vec2::new(
                self.origin.x + self.nx as f64 * self.cell_size,
                self.origin.y + self.ny as f64 * self.cell_size,
            ),
        )
    }

    /// Bilinear interpolation between the four surrounding cell centers;
    /// constant extrapolation in the half-cell fringe inside the bounds.
    pub fn query(&self, p: Vec2) -> Result<f64> {
        if !self.bounds().contains(p) {
            return Err(Error::Runtime(format!(
                "signed-distance query at ({:.3}, {:.3}) outside scene bounds",
                p.x, p.y
            )));
        }
        let gx = (p.x - self.origin.x) / self.cell_size - 0.5;
        let gy = (p.y - self.origin.y) / self.cell_size - 0.5;
        let i0 = gx.floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j0 = gy.floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        let i1 = (i0 + 1).min(self.nx - 1);
        let j1 = (j0 + 1).min(self.ny - 1);
        let tx = (gx - i0 as f64).clamp(0.0, 1.0);
        let ty = (gy - j0 as f64).clamp(0.0, 1.0);
        let v00 = self.value(i0, j0);
        let v10 = self.value(i1, j0);
        let v01 = self.value(i0, j1);
        let v11 = self.value(i1, j1);
        Ok(v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty)
    }

    /// Like `query` but clamps the point into bounds first; for body samples
    /// that may momentarily exit the scene (outside reads as deep penetration).
    pub fn query_clamped(&self, p: Vec2) -> f64 {
        let b = self.bounds();
        let q = Vec2::new(p.x.clamp(b.min.x, b.max.x), p.y.clamp(b.min.y, b.max.y));
        let inside = self.query(q).expect("clamped point in bounds");
        let outside = p.dist(q);
        if outside > 0.0 {
            inside.min(0.0) - outside
        } else {
            inside
        }
    }
}
