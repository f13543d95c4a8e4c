//! Egocentric depth sensing: evenly spaced rays cast from the eye midpoint
//! within a field of view centered on the horizontal projection of the
//! viewing direction, intersected exactly against obstacle boxes and the
//! scene bounds.

use crate::body::{derive_view, MarkerFrame};
use crate::geom::{Aabb, Vec2};
use crate::scene::SceneMap;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Depth reported when the ray origin is already inside an obstacle. Sensing
/// must stay defined during penetration frames, so this clamps 0⁺ distances.
pub const INSIDE_CLAMP: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SensingConfig {
    /// Ray count across the field of view, endpoints included.
    pub n_rays: usize,
    /// Field of view in degrees relative to the viewing direction.
    pub fov_deg: [f64; 2],
    /// Maximum reported depth in meters.
    pub range: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig {
            n_rays: 32,
            fov_deg: [-90.0, 90.0],
            range: 7.0,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rays < 2 {
            return Err(Error::Validation("sensing needs at least 2 rays".into()));
        }
        if !(self.fov_deg[0] < self.fov_deg[1]) {
            return Err(Error::Validation("sensing fov must be a nonempty span".into()));
        }
        if !(self.range > 0.0) {
            return Err(Error::Validation("sensing range must be positive".into()));
        }
        Ok(())
    }

    /// Ray angle offsets in radians, evenly spaced with both endpoints.
    pub fn angles(&self) -> Vec<f64> {
        let lo = self.fov_deg[0].to_radians();
        let hi = self.fov_deg[1].to_radians();
        let step = (hi - lo) / (self.n_rays - 1) as f64;
        (0..self.n_rays).map(|i| lo + i as f64 * step).collect()
    }
}

/// Smallest non-negative `t` with `origin + t·dir` on the box surface, by the
/// slab method; `None` for a miss. Origins inside (or on) the box return the
/// positive clamp instead of zero.
pub fn ray_box(origin: Vec2, dir: Vec2, b: &Aabb) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..2 {
        let (o, d, lo, hi) = if axis == 0 {
            (origin.x, dir.x, b.min.x, b.max.x)
        } else {
            (origin.y, dir.y, b.min.y, b.max.y)
        };
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let ta = (lo - o) / d;
            let tb = (hi - o) / d;
            let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t_near = t_near.max(ta);
            t_far = t_far.min(tb);
        }
    }
    if t_near > t_far || t_far < 0.0 {
        return None;
    }
    if t_near <= 0.0 {
        Some(INSIDE_CLAMP)
    } else {
        Some(t_near)
    }
}

/// Distance along the ray to the point where it leaves the bounds rectangle.
/// Requires the origin inside the bounds.
fn exit_bounds(origin: Vec2, dir: Vec2, bounds: &Aabb) -> f64 {
    let mut t_exit = f64::INFINITY;
    for axis in 0..2 {
        let (o, d, lo, hi) = if axis == 0 {
            (origin.x, dir.x, bounds.min.x, bounds.max.x)
        } else {
            (origin.y, dir.y, bounds.min.y, bounds.max.y)
        };
        if d != 0.0 {
            let t = ((lo - o) / d).max((hi - o) / d);
            t_exit = t_exit.min(t);
        }
    }
    t_exit
}

/// One fan of depths. The i-th ray points `angles[i]` radians off `view_dir`;
/// each depth is the exact nearest box or bounds-wall hit, clipped to range.
pub fn cast_rays(
    boxes: &[Aabb],
    bounds: &Aabb,
    origin: Vec2,
    view_dir: Vec2,
    cfg: &SensingConfig,
) -> Result<Vec<f64>> {
    if !bounds.contains(origin) {
        return Err(Error::Runtime(format!(
            "sensing origin ({}, {}) outside scene bounds",
            origin.x, origin.y
        )));
    }
    let mut out = Vec::with_capacity(cfg.n_rays);
    for offset in cfg.angles() {
        let dir = view_dir.rotated(offset);
        let mut depth = exit_bounds(origin, dir, bounds);
        for b in boxes {
            if let Some(t) = ray_box(origin, dir, b) {
                depth = depth.min(t);
            }
        }
        out.push(depth.min(cfg.range).max(INSIDE_CLAMP));
    }
    Ok(out)
}

/// Depth rows for each seed frame: ray origin at that frame's eye midpoint,
/// fan centered on the horizontal projection of its viewing direction, and
/// obstacles evaluated at that frame's timestamp. The bounds act as walls, so
/// an eye that has left the bounds sits inside wall material and every ray
/// reads the inside clamp — sensing stays defined wherever the body can get.
pub fn ego_sensing(
    scene: &SceneMap,
    seed: &[MarkerFrame],
    head_pitch: f64,
    times: &[f64],
    cfg: &SensingConfig,
) -> Result<Vec<Vec<f64>>> {
    if seed.len() != times.len() {
        return Err(Error::Runtime(
            "one timestamp per seed frame is required for sensing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(seed.len());
    for (frame, &t) in seed.iter().zip(times) {
        let origin = frame.eye_mid_xy();
        if !scene.bounds.contains(origin) {
            rows.push(vec![INSIDE_CLAMP; cfg.n_rays]);
            continue;
        }
        let v = derive_view(frame, head_pitch)?;
        let flat = Vec2::new(v[0], v[1]);
        let view = flat
            .normalized()
            .ok_or_else(|| Error::Runtime("viewing direction has no horizontal part".into()))?;
        let boxes = scene.obstacles_at(t);
        rows.push(cast_rays(&boxes, &scene.bounds, origin, view, cfg)?);
    }
    Ok(rows)
}
