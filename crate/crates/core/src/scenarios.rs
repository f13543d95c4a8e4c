//! Benchmark scenes and start–goal samplers: the fixed layouts the test and
//! evaluation suites run against, plus helpers for loading scene directories
//! and randomizing crowd episodes.

use std::path::Path;
use std::sync::Arc;

use crate::crowd::{build_crossing_scenario, build_moving_obstacle_scenario, CrowdScenario};
use crate::geom::{Aabb, Pose2, Vec2};
use crate::rng::uniform_f64;
use crate::scene::SceneMap;
use crate::trainer::StartGoalSampler;
use crate::{Error, Result};
use rand_chacha::ChaCha12Rng;

/// Clearance kept between sampled starts/goals and obstacle boxes.
pub const SCENE_WALKABLE_MARGIN: f64 = 0.4;

/// Empty square arena with side `2 * half` meters.
pub fn empty_scene(half: f64) -> SceneMap {
    SceneMap::new(
        Aabb::new(Vec2::new(-half, -half), Vec2::new(half, half)),
        0.1,
    )
}

/// 10×10 m arena with one 1.2×1.2 m box at the center — the layout that
/// separates a goal-seeking policy from one that also has to detour.
pub fn single_box_scene() -> SceneMap {
    let mut s = empty_scene(5.0);
    s.walkable_margin = SCENE_WALKABLE_MARGIN;
    s.static_obstacles
        .push(Aabb::from_center_extents(Vec2::new(0.0, 0.0), Vec2::new(1.2, 1.2)));
    s
}

/// 12×12 m arena with eight boxes ringing the center, leaving ~1.7 m
/// corridors; forces repeated turning between most start–goal pairs.
pub fn cluttered_scene() -> SceneMap {
    let mut s = empty_scene(6.0);
    s.walkable_margin = SCENE_WALKABLE_MARGIN;
    let boxes = [
        ((3.0, 3.0), (1.4, 1.4)),
        ((-3.0, 3.0), (1.4, 1.4)),
        ((3.0, -3.0), (1.4, 1.4)),
        ((-3.0, -3.0), (1.4, 1.4)),
        ((0.0, 3.2), (1.2, 1.2)),
        ((0.0, -3.2), (1.2, 1.2)),
        ((3.2, 0.0), (1.2, 1.2)),
        ((-3.2, 0.0), (1.2, 1.2)),
    ];
    for ((cx, cy), (ex, ey)) in boxes {
        s.static_obstacles
            .push(Aabb::from_center_extents(Vec2::new(cx, cy), Vec2::new(ex, ey)));
    }
    s
}

/// Uniform rejection sampler over a scene's walkable area: start pose with
/// uniform heading, goal within a separation band, both respecting the
/// scene's walkable margin.
#[derive(Debug, Clone, Copy)]
pub struct UniformFreeSpace {
    pub min_sep: f64,
    pub max_sep: f64,
    /// Inset from the arena bounds.
    pub margin: f64,
}

impl Default for UniformFreeSpace {
    fn default() -> Self {
        UniformFreeSpace {
            min_sep: 1.0,
            max_sep: 6.0,
            margin: 0.5,
        }
    }
}

impl UniformFreeSpace {
    fn draw_point(&self, rng: &mut ChaCha12Rng, scene: &SceneMap) -> Vec2 {
        let lo = Vec2::new(scene.bounds.min.x + self.margin, scene.bounds.min.y + self.margin);
        let hi = Vec2::new(scene.bounds.max.x - self.margin, scene.bounds.max.y - self.margin);
        Vec2::new(
            lo.x + uniform_f64(rng) * (hi.x - lo.x),
            lo.y + uniform_f64(rng) * (hi.y - lo.y),
        )
    }
}

impl StartGoalSampler for UniformFreeSpace {
    fn sample(&self, rng: &mut ChaCha12Rng, scene: &SceneMap) -> (Pose2, Vec2) {
        for _ in 0..100_000 {
            let s = self.draw_point(rng, scene);
            let heading = uniform_f64(rng) * std::f64::consts::TAU;
            let g = self.draw_point(rng, scene);
            let sep = s.dist(g);
            if scene.walkable(s, 0.0)
                && scene.walkable(g, 0.0)
                && sep >= self.min_sep
                && sep <= self.max_sep
            {
                return (Pose2::new(s.x, s.y, heading), g);
            }
        }
        panic!("free-space sampler failed; scene leaves too little walkable area");
    }
}

/// Rotate a pose and a goal around the origin by `phase`.
fn rotate_pair(start: Pose2, goal: Vec2, phase: f64) -> (Pose2, Vec2) {
    let p = start.pos.rotated(phase);
    (
        Pose2::new(p.x, p.y, (start.heading + phase).rem_euclid(std::f64::consts::TAU)),
        goal.rotated(phase),
    )
}

/// A randomized crossing episode: the canonical antipodal layout rotated by
/// a uniform phase with the radius jittered in [radius · 0.85, radius · 1.15].
pub fn crossing_episode(c: usize, radius: f64, rng: &mut ChaCha12Rng) -> Result<CrowdScenario> {
    let r = radius * (0.85 + 0.3 * uniform_f64(rng));
    let phase = uniform_f64(rng) * std::f64::consts::TAU;
    let base = build_crossing_scenario(c, r)?;
    let agents = base
        .agents
        .iter()
        .map(|&(s, g)| rotate_pair(s, g, phase))
        .collect();
    Ok(CrowdScenario {
        scene: base.scene,
        agents,
        max_steps: base.max_steps,
    })
}

/// A randomized moving-obstacle episode: a fixed 6 m walk whose crossing
/// obstacle speed is drawn from [0.3, 0.7] m/s, the whole layout rotated by
/// a uniform phase.
pub fn moving_obstacle_episode(rng: &mut ChaCha12Rng) -> Result<CrowdScenario> {
    let speed = 0.3 + 0.4 * uniform_f64(rng);
    let phase = uniform_f64(rng) * std::f64::consts::TAU;
    let (start, goal) = rotate_pair(
        Pose2::new(-3.0, 0.0, 0.0),
        Vec2::new(3.0, 0.0),
        phase,
    );
    build_moving_obstacle_scenario(start, goal, speed)
}

/// Load every `*.json` scene in a directory, sorted by file name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<(String, Arc<SceneMap>)>> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Validation(format!(
            "no .json scenes in {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for p in entries {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let scene = SceneMap::load(&p)?;
        scene.validate()?;
        out.push((name, Arc::new(scene)));
    }
    Ok(out)
}
