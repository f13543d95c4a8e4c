//! Evaluation metrics over recorded trajectories: success rate, final goal
//! distance, foot-contact quality, scene penetration, inter-human
//! penetration, and path diversity. Every metric is a pure function of the
//! trajectory data, so recomputation from a serialized file reproduces the
//! in-memory values exactly.

use crate::body::{Decoder, MarkerFrame, FOOT_MARKERS, marker};
use crate::geom::Vec2;
use crate::scene::SceneMap;
use crate::traj::Trajectory;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Pelvis–goal radius that counts an episode as a success (evaluation
/// threshold; the in-episode termination radius is tighter).
pub const SUCCESS_RADIUS: f64 = 0.3;
/// Foot height allowance before the contact score decays.
pub const CONTACT_HEIGHT_THRES: f64 = 0.05;
/// Foot speed allowance before the skating penalty decays the score.
pub const CONTACT_SPEED_THRES: f64 = 0.075;
/// Torso capsule radius (pelvis to head top) for human-penetration scoring.
pub const TORSO_RADIUS: f64 = 0.15;
/// Leg capsule radius (mid-hip to floor) for human-penetration scoring.
pub const LEG_RADIUS: f64 = 0.12;
/// Resampled path length for the diversity metric.
pub const DIVERSITY_POINTS: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent of episodes ending within `SUCCESS_RADIUS` of the goal.
    pub success_rate: f64,
    /// Mean final pelvis–goal distance in meters.
    pub final_distance: f64,
    /// Mean foot-contact score in (0, 1].
    pub contact: f64,
    /// Mean percent of frames with any marker inside an obstacle.
    pub pene_scene: f64,
    /// Inter-human penetration score (None for single-agent batches).
    pub pene_human: Option<f64>,
    /// Path diversity in meters (None unless computed over shared-pair rollouts).
    pub diversity: Option<f64>,
    pub episodes: usize,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.success_rate) {
            return Err(Error::Validation(format!(
                "success rate {} outside [0, 100]",
                self.success_rate
            )));
        }
        if !(self.contact > 0.0 && self.contact <= 1.0) {
            return Err(Error::Validation(format!(
                "contact score {} outside (0, 1]",
                self.contact
            )));
        }
        if !(0.0..=100.0).contains(&self.pene_scene) {
            return Err(Error::Validation(format!(
                "scene penetration {} outside [0, 100]",
                self.pene_scene
            )));
        }
        Ok(())
    }
}

/// Percent of trajectories whose final pelvis lands strictly within
/// `SUCCESS_RADIUS` of the goal.
pub fn success_rate(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::Validation("success rate over zero trajectories".into()));
    }
    let hits = trajs
        .iter()
        .filter(|t| t.final_distance() < SUCCESS_RADIUS)
        .count();
    Ok(hits as f64 / trajs.len() as f64 * 100.0)
}

/// Mean final pelvis–goal distance in the floor plane.
pub fn final_distance(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::Validation("final distance over zero trajectories".into()));
    }
    Ok(trajs.iter().map(|t| t.final_distance()).sum::<f64>() / trajs.len() as f64)
}

fn contact_of_frame(f: &MarkerFrame) -> f64 {
    let mut min_z = f64::INFINITY;
    let mut min_v = f64::INFINITY;
    for &m in &FOOT_MARKERS {
        min_z = min_z.min(f.positions[m][2]);
        let v = f.velocities[m];
        min_v = min_v.min((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
    }
    let h = (min_z.abs() - CONTACT_HEIGHT_THRES).max(0.0);
    let s = (min_v - CONTACT_SPEED_THRES).max(0.0);
    (-h).exp() * (-s).exp()
}

/// Foot-contact quality: per frame, the lowest foot's height beyond a 0.05 m
/// band and the slowest foot's speed beyond 0.075 m/s each decay the score
/// exponentially; 1 means grounded, skate-free support throughout. Averaged
/// over the whole frame sequence.
pub fn contact_metric(traj: &Trajectory) -> Result<f64> {
    let frames = traj.frames();
    if frames.is_empty() {
        return Err(Error::Validation("contact metric over an empty trajectory".into()));
    }
    Ok(frames.iter().map(|(_, f)| contact_of_frame(f)).sum::<f64>() / frames.len() as f64)
}

/// Percent of frames in which any marker's floor-plane position lies inside
/// any obstacle box (closed boxes; moving boxes evaluated at the frame time).
pub fn pene_scene(traj: &Trajectory, scene: &SceneMap) -> Result<f64> {
    let frames = traj.frames();
    if frames.is_empty() {
        return Err(Error::Validation("scene penetration over an empty trajectory".into()));
    }
    let mut hit_frames = 0usize;
    for (t, f) in &frames {
        let inside = f.positions.iter().any(|p| {
            let xy = Vec2::new(p[0], p[1]);
            scene.static_obstacles.iter().any(|b| b.contains(xy))
                || scene.moving_obstacles.iter().any(|m| m.box_at(*t).contains(xy))
        });
        if inside {
            hit_frames += 1;
        }
    }
    Ok(hit_frames as f64 / frames.len() as f64 * 100.0)
}

/// Squared distance from `p` to the segment `a`–`b`.
fn dist2_to_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = p[0] - (a[0] + t * ab[0]);
    let dy = p[1] - (a[1] + t * ab[1]);
    let dz = p[2] - (a[2] + t * ab[2]);
    dx * dx + dy * dy + dz * dz
}

/// The two capsule axes of a body frame: torso (pelvis to head top) and legs
/// (mid-hip straight down to the floor).
fn capsules_of(f: &MarkerFrame) -> [([f64; 3], [f64; 3], f64); 2] {
    let pelvis = f.positions[marker::PELVIS];
    let head = f.positions[marker::HEAD_TOP];
    let hl = f.positions[marker::HIP_L];
    let hr = f.positions[marker::HIP_R];
    let mid_hip = [
        (hl[0] + hr[0]) * 0.5,
        (hl[1] + hr[1]) * 0.5,
        (hl[2] + hr[2]) * 0.5,
    ];
    let floor = [mid_hip[0], mid_hip[1], 0.0];
    [
        (pelvis, head, TORSO_RADIUS),
        (mid_hip, floor, LEG_RADIUS),
    ]
}

fn points_inside_body(points: &[[f64; 3]], body: &MarkerFrame) -> usize {
    let caps = capsules_of(body);
    points
        .iter()
        .filter(|p| {
            caps.iter()
                .any(|(a, b, r)| dist2_to_segment(**p, *a, *b) <= r * r)
        })
        .count()
}

/// Inter-human penetration: each agent's body is two vertical capsules; per
/// frame, every other agent's surface sample points are tested against them,
/// and the counts are summed over all ordered pairs and all frames. Zero
/// means no interpenetration over the episode. Agents that stop early hold
/// their final frame for the remainder.
pub fn pene_human(tracks: &[Trajectory], decoder: &Decoder) -> Result<f64> {
    if tracks.len() < 2 {
        return Err(Error::Validation(format!(
            "human penetration needs at least 2 agents, got {}",
            tracks.len()
        )));
    }
    let seqs: Vec<Vec<(f64, MarkerFrame)>> = tracks.iter().map(|t| t.frames()).collect();
    if seqs.iter().any(|s| s.is_empty()) {
        return Err(Error::Validation("human penetration over an empty track".into()));
    }
    let n_frames = seqs.iter().map(|s| s.len()).max().unwrap();
    let frame_of = |agent: usize, k: usize| -> &MarkerFrame {
        let s = &seqs[agent];
        &s[k.min(s.len() - 1)].1
    };
    let mut samples: Vec<Vec<[f64; 3]>> = vec![Vec::new(); tracks.len()];
    let mut total = 0usize;
    for k in 0..n_frames {
        for (j, sample) in samples.iter_mut().enumerate() {
            decoder.body_sample_points(frame_of(j, k), sample);
        }
        for i in 0..tracks.len() {
            let body = frame_of(i, k);
            for (j, sample) in samples.iter().enumerate() {
                if j != i {
                    total += points_inside_body(sample, body);
                }
            }
        }
    }
    Ok(total as f64)
}

/// Path diversity over K rollouts of the same start–goal pair: each pelvis
/// path is resampled to `DIVERSITY_POINTS` points by normalized time; at each
/// index the spread across rollouts is the square root of the summed per-axis
/// population variances; the result is the average spread over indices.
pub fn path_diversity_points(paths: &[Vec<Vec2>]) -> Result<f64> {
    if paths.len() < 2 {
        return Err(Error::Validation(format!(
            "path diversity needs at least 2 rollouts, got {}",
            paths.len()
        )));
    }
    if paths.iter().any(|p| p.is_empty()) {
        return Err(Error::Validation("path diversity over an empty path".into()));
    }
    let p = DIVERSITY_POINTS;
    let k_n = paths.len() as f64;
    let resampled: Vec<Vec<Vec2>> = paths
        .iter()
        .map(|path| {
            (0..p)
                .map(|k| {
                    let u = k as f64 / (p - 1) as f64;
                    let x = u * (path.len() - 1) as f64;
                    let i0 = x.floor() as usize;
                    let i1 = (i0 + 1).min(path.len() - 1);
                    let frac = x - i0 as f64;
                    let (a, b) = (path[i0], path[i1]);
                    Vec2::new(a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac)
                })
                .collect()
        })
        .collect();
    let mut acc = 0.0;
    for idx in 0..p {
        // Population variance in its pairwise form, which is exactly zero
        // for identical rollouts instead of accumulating mean round-off.
        let mut sum2 = 0.0;
        for a in &resampled {
            for b in &resampled {
                sum2 += (a[idx].x - b[idx].x).powi(2) + (a[idx].y - b[idx].y).powi(2);
            }
        }
        acc += (sum2 / (2.0 * k_n * k_n)).sqrt();
    }
    Ok(acc / p as f64)
}

/// `path_diversity_points` over recorded trajectories, after checking they
/// share one start–goal pair.
pub fn path_diversity(trajs: &[Trajectory]) -> Result<f64> {
    if trajs.len() < 2 {
        return Err(Error::Validation(format!(
            "path diversity needs at least 2 rollouts, got {}",
            trajs.len()
        )));
    }
    let first = &trajs[0];
    for t in &trajs[1..] {
        let same = t.start.pos.dist(first.start.pos) < 1e-9
            && (t.start.heading - first.start.heading).abs() < 1e-9
            && t.goal.dist(first.goal) < 1e-9;
        if !same {
            return Err(Error::Validation(
                "path diversity requires a shared start–goal pair".into(),
            ));
        }
    }
    let paths: Vec<Vec<Vec2>> = trajs.iter().map(|t| t.pelvis_path()).collect();
    path_diversity_points(&paths)
}

/// Batch summary of the single-agent metrics (human penetration and
/// diversity are filled separately where they apply).
pub fn summarize(trajs: &[Trajectory], scene: &SceneMap) -> Result<MetricsReport> {
    let n = trajs.len() as f64;
    let contact = trajs
        .iter()
        .map(contact_metric)
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / n;
    let pene = trajs
        .iter()
        .map(|t| pene_scene(t, scene))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / n;
    Ok(MetricsReport {
        success_rate: success_rate(trajs)?,
        final_distance: final_distance(trajs)?,
        contact,
        pene_scene: pene,
        pene_human: None,
        diversity: None,
        episodes: trajs.len(),
    })
}
