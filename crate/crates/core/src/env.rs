//! Finite-horizon navigation environment: assembles the observed state,
//! evaluates every reward term with its published weight, and applies the
//! three-way termination rule with success taking priority over penetration,
//! which takes priority over timeout.

use std::sync::Arc;

use crate::body::{
    derive_forward, derive_view, marker, pose_score, Decoder, GaitState, MarkerFrame,
    MotionPrimitive, DT, FOOT_MARKERS, M, T_FRAMES, T_SEED,
};
use crate::geom::{Aabb, Pose2, Vec2};
use crate::scene::{OccupancyGrid, SceneMap, SdfGrid};
use crate::sensing::{ego_sensing, SensingConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Wall-clock seconds the world advances per environment step: the new
/// frames of one primitive (its seed frames belong to the previous step).
pub const STEP_SECONDS: f64 = (T_FRAMES - T_SEED) as f64 * DT;

/// Training stage: pretraining trades a heavy penetration weight for free
/// exploration (no penetration termination); finetuning lightens the weight
/// and terminates on contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Scene regime: sparse scenes score penetration on occupancy cells inside
/// the motion bounding box; crowded scenes integrate clipped distance-field
/// depth over body surface samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Sparse,
    Crowded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Running,
    Success,
    Penetration,
    Timeout,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub floor: f64,
    pub skate: f64,
    pub dist: f64,
    pub ori: f64,
    pub attention: f64,
    pub pene_pretrain: f64,
    pub pene_finetune: f64,
    pub pose: f64,
    pub succ: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            floor: 0.1,
            skate: 0.3,
            dist: 1.0,
            ori: 0.1,
            attention: 0.3,
            pene_pretrain: 1.0,
            pene_finetune: 0.1,
            pose: 0.1,
            succ: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Episode length cap in decision steps.
    pub max_steps: usize,
    /// Goal distance below which the success reward fires and the episode
    /// ends (strict inequality).
    pub success_reward_thres: f64,
    /// Larger goal distance used by evaluation metrics; also the minimum
    /// start/goal separation at reset.
    pub success_eval_thres: f64,
    pub mode: Mode,
    /// Fraction of body surface samples that may penetrate in a single frame
    /// before a crowded-mode finetuning episode terminates.
    pub pene_term_fraction: f64,
    /// Report the attention term as a raw cosine in [−1, 1] instead of the
    /// normalized form in [0, 1].
    pub attention_cosine: bool,
    pub weights: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            max_steps: 24,
            success_reward_thres: 0.1,
            success_eval_thres: 0.3,
            mode: Mode::Sparse,
            pene_term_fraction: 0.004,
            attention_cosine: false,
            weights: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Validation("max_steps must be at least 1".into()));
        }
        if !(self.success_reward_thres > 0.0 && self.success_eval_thres > 0.0) {
            return Err(Error::Validation("success thresholds must be positive".into()));
        }
        let w = &self.weights;
        for (name, v) in [
            ("floor", w.floor),
            ("skate", w.skate),
            ("dist", w.dist),
            ("ori", w.ori),
            ("attention", w.attention),
            ("pene_pretrain", w.pene_pretrain),
            ("pene_finetune", w.pene_finetune),
            ("pose", w.pose),
            ("succ", w.succ),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Validation(format!(
                    "reward weight {name} must be non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// The observed Markov state: seed frames, per-marker goal directions, the
/// depth fan per seed frame, goal distance, and remaining steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub seed: Vec<MarkerFrame>,
    pub marker_dirs: Vec<[[f64; 3]; M]>,
    pub sensing: Vec<Vec<f64>>,
    pub d: f64,
    pub tau: usize,
}

/// Raw (unweighted) reward terms of one step.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RawRewards {
    pub floor: f64,
    pub skate: f64,
    pub dist: f64,
    pub ori: f64,
    pub attention: f64,
    pub pene: f64,
    pub pose: f64,
    pub succ: f64,
}

/// Weighted reward terms and their sum.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub floor: f64,
    pub skate: f64,
    pub dist: f64,
    pub ori: f64,
    pub attention: f64,
    pub pene: f64,
    pub pose: f64,
    pub succ: f64,
    pub total: f64,
}

/// Normalized direction of each marker to the goal lifted to the marker's
/// height; markers within a micron of the goal produce a zero vector rather
/// than NaN.
pub fn marker_directions(seed: &[MarkerFrame], goal: Vec2) -> Vec<[[f64; 3]; M]> {
    seed.iter()
        .map(|f| {
            let mut rows = [[0.0; 3]; M];
            for m in 0..M {
                let p = f.positions[m];
                let dx = goal.x - p[0];
                let dy = goal.y - p[1];
                let n = (dx * dx + dy * dy).sqrt();
                if n >= 1e-6 {
                    rows[m] = [dx / n, dy / n, 0.0];
                }
            }
            rows
        })
        .collect()
}

/// Foot-contact terms over every frame of the primitive: floor proximity and
/// skating, each through exp(−(violation)₊) of the best frame/marker.
pub fn r_contact(frames: &[MarkerFrame]) -> (f64, f64) {
    let mut min_z = f64::INFINITY;
    let mut min_v = f64::INFINITY;
    for f in frames {
        for &m in &FOOT_MARKERS {
            min_z = min_z.min(f.positions[m][2]);
            let v = f.velocities[m];
            min_v = min_v.min((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
        }
    }
    let floor = (-(min_z.abs() - 0.02).max(0.0)).exp();
    let skate = (-(min_v - 0.075).max(0.0)).exp();
    (floor, skate)
}

pub fn r_dist(d_prev: f64, d_curr: f64) -> f64 {
    d_prev - d_curr
}

/// Body-orientation alignment with the goal direction, mapped to [0, 1].
pub fn r_ori(o_b: Vec2, pelvis: Vec2, goal: Vec2) -> f64 {
    match (goal - pelvis).normalized() {
        Some(g) => (o_b.dot(g) + 1.0) / 2.0,
        None => 1.0,
    }
}

/// Viewing-direction alignment with the goal lifted to head height. The
/// normalized form maps to [0, 1]; the cosine form reports the raw dot.
pub fn r_attention(v: [f64; 3], head: [f64; 3], goal: Vec2, cosine: bool) -> f64 {
    let g = [goal.x - head[0], goal.y - head[1], 0.0];
    let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
    if n < 1e-9 {
        return 1.0;
    }
    let cos = (v[0] * g[0] + v[1] * g[1]) / n;
    if cosine {
        cos
    } else {
        (cos + 1.0) / 2.0
    }
}

/// Sparse-regime penetration score for a motion bounding box: a small bonus
/// while fewer than three non-walkable cells fall inside it.
pub fn r_pene_sparse_bbox(grid: &OccupancyGrid, bbox: &Aabb) -> f64 {
    if grid.nonwalkable_in_bbox(bbox) < 3 {
        0.05
    } else {
        0.0
    }
}

/// Horizontal bounding box over every marker of every frame.
pub fn motion_bbox(frames: &[MarkerFrame]) -> Aabb {
    Aabb::hull_of(
        frames
            .iter()
            .flat_map(|f| f.positions.iter().map(|p| Vec2::new(p[0], p[1]))),
    )
    .expect("motion has at least one marker")
}

pub fn r_pene_sparse(grid: &OccupancyGrid, frames: &[MarkerFrame]) -> f64 {
    r_pene_sparse_bbox(grid, &motion_bbox(frames))
}

/// Crowded-regime penetration: clipped distance-field depth summed over all
/// body surface samples of all frames. Returns the reward
/// exp(−sum/frame_count) and the largest per-frame count of penetrating
/// samples (for the termination rule).
pub fn crowded_penetration(
    sdf: &SdfGrid,
    frames: &[MarkerFrame],
    decoder: &Decoder,
    scratch: &mut Vec<[f64; 3]>,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut max_count = 0usize;
    for f in frames {
        decoder.body_sample_points(f, scratch);
        let mut count = 0usize;
        for p in scratch.iter() {
            let v = sdf.query_clamped(Vec2::new(p[0], p[1]));
            if v < 0.0 {
                sum += -v;
                count += 1;
            }
        }
        max_count = max_count.max(count);
    }
    ((-(sum / frames.len() as f64)).exp(), max_count)
}

/// Pose-prior bonus: fires while the latent stays in the plausible region.
pub fn r_pose(score: f64) -> f64 {
    if score < 11.0 {
        0.05
    } else {
        0.0
    }
}

/// Success indicator with a strict threshold.
pub fn r_succ(d: f64) -> f64 {
    if d < 0.1 {
        1.0
    } else {
        0.0
    }
}

/// Weighted sum of the raw terms; the penetration weight depends on stage.
pub fn total_reward(raw: &RawRewards, w: &RewardWeights, stage: Stage) -> RewardBreakdown {
    let w_pene = match stage {
        Stage::Pretrain => w.pene_pretrain,
        Stage::Finetune => w.pene_finetune,
    };
    let mut b = RewardBreakdown {
        floor: w.floor * raw.floor,
        skate: w.skate * raw.skate,
        dist: w.dist * raw.dist,
        ori: w.ori * raw.ori,
        attention: w.attention * raw.attention,
        pene: w_pene * raw.pene,
        pose: w.pose * raw.pose,
        succ: w.succ * raw.succ,
        total: 0.0,
    };
    b.total = b.floor + b.skate + b.dist + b.ori + b.attention + b.pene + b.pose + b.succ;
    b
}

/// Resolve the episode status after a step. Success outranks penetration,
/// which outranks timeout; penetration can only fire while finetuning.
pub fn resolve_termination(
    d: f64,
    penetration_violated: bool,
    tau_remaining: usize,
    cfg: &EnvConfig,
    stage: Stage,
) -> Termination {
    if d < cfg.success_reward_thres {
        Termination::Success
    } else if stage == Stage::Finetune && penetration_violated {
        Termination::Penetration
    } else if tau_remaining == 0 {
        Termination::Timeout
    } else {
        Termination::Running
    }
}

/// One navigation episode over a shared immutable scene. Owns only episode
/// state; many instances can run concurrently against the same scene.
#[derive(Debug, Clone)]
pub struct Env {
    pub scene: Arc<SceneMap>,
    pub decoder: Arc<Decoder>,
    pub sensing: SensingConfig,
    pub cfg: EnvConfig,
    pub stage: Stage,
    static_grids: Option<Arc<(OccupancyGrid, SdfGrid)>>,
    seed: Vec<MarkerFrame>,
    gait: GaitState,
    goal: Vec2,
    attention_goal: Vec2,
    d: f64,
    tau: usize,
    time: f64,
    status: Termination,
    scratch: Vec<[f64; 3]>,
    last_prim: Option<MotionPrimitive>,
}

impl Env {
    pub fn new(
        scene: Arc<SceneMap>,
        decoder: Arc<Decoder>,
        sensing: SensingConfig,
        cfg: EnvConfig,
        stage: Stage,
    ) -> Result<Env> {
        cfg.validate()?;
        sensing.validate()?;
        // A scene without moving obstacles has one occupancy/distance field
        // for all time; build it once and share it.
        let static_grids = if scene.moving_obstacles.is_empty() {
            let grid = scene.rasterize(0.0);
            let sdf = SdfGrid::build(&grid)?;
            Some(Arc::new((grid, sdf)))
        } else {
            None
        };
        let origin = Pose2::new(0.0, 0.0, 0.0);
        let (seed, gait) = decoder.standing_seed(origin);
        Ok(Env {
            scene,
            decoder,
            sensing,
            cfg,
            stage,
            static_grids,
            seed,
            gait,
            goal: Vec2::ZERO,
            attention_goal: Vec2::ZERO,
            d: 0.0,
            tau: 0,
            time: 0.0,
            status: Termination::Timeout,
            scratch: Vec::new(),
            last_prim: None,
        })
    }

    /// Swap the scene under the environment, e.g. to include other agents'
    /// bounding boxes as obstacles. Episode state is untouched; the cached
    /// static grids are rebuilt for the new scene.
    pub fn set_scene(&mut self, scene: Arc<SceneMap>) -> Result<()> {
        self.static_grids = if scene.moving_obstacles.is_empty() {
            let grid = scene.rasterize(0.0);
            let sdf = SdfGrid::build(&grid)?;
            Some(Arc::new((grid, sdf)))
        } else {
            None
        };
        self.scene = scene;
        Ok(())
    }

    fn grids_at(&self, t: f64) -> Result<Arc<(OccupancyGrid, SdfGrid)>> {
        match &self.static_grids {
            Some(g) => Ok(Arc::clone(g)),
            None => {
                let grid = self.scene.rasterize(t);
                let sdf = SdfGrid::build(&grid)?;
                Ok(Arc::new((grid, sdf)))
            }
        }
    }

    /// Begin an episode standing at `start` with the given goal. The
    /// attention target defaults to the navigation goal.
    pub fn reset(&mut self, start: Pose2, goal: Vec2) -> Result<EnvState> {
        self.reset_with_attention(start, goal, None)
    }

    pub fn reset_with_attention(
        &mut self,
        start: Pose2,
        goal: Vec2,
        attention_goal: Option<Vec2>,
    ) -> Result<EnvState> {
        if !self.scene.walkable(start.pos, 0.0) {
            return Err(Error::Validation(format!(
                "start ({}, {}) is not walkable",
                start.pos.x, start.pos.y
            )));
        }
        if !self.scene.walkable(goal, 0.0) {
            return Err(Error::Validation(format!(
                "goal ({}, {}) is not walkable",
                goal.x, goal.y
            )));
        }
        let d = start.pos.dist(goal);
        if d < self.cfg.success_eval_thres {
            return Err(Error::Validation(format!(
                "start/goal separation {d} below the {} m minimum",
                self.cfg.success_eval_thres
            )));
        }
        let (seed, gait) = self.decoder.standing_seed(start);
        self.seed = seed;
        self.gait = gait;
        self.goal = goal;
        self.attention_goal = attention_goal.unwrap_or(goal);
        self.d = d;
        self.tau = self.cfg.max_steps;
        self.time = 0.0;
        self.status = Termination::Running;
        self.last_prim = None;
        self.observe()
    }

    /// The motion primitive executed by the most recent step, if any.
    pub fn last_primitive(&self) -> Option<&MotionPrimitive> {
        self.last_prim.as_ref()
    }

    pub fn status(&self) -> Termination {
        self.status
    }

    pub fn goal(&self) -> Vec2 {
        self.goal
    }

    pub fn distance(&self) -> f64 {
        self.d
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn gait(&self) -> &GaitState {
        &self.gait
    }

    pub fn seed_frames(&self) -> &[MarkerFrame] {
        &self.seed
    }

    /// Timestamps of the current seed frames.
    pub fn seed_times(&self) -> [f64; T_SEED] {
        [self.time - DT, self.time]
    }

    /// Build the observed state for the current seed.
    pub fn observe(&self) -> Result<EnvState> {
        let times = self.seed_times();
        let sensing = ego_sensing(
            &self.scene,
            &self.seed,
            self.gait.head_pitch,
            &times,
            &self.sensing,
        )?;
        Ok(EnvState {
            seed: self.seed.clone(),
            marker_dirs: marker_directions(&self.seed, self.goal),
            sensing,
            d: self.d,
            tau: self.tau,
        })
    }

    /// Advance one decision step: decode the primitive, score every reward
    /// term on it, advance the world clock, and resolve termination.
    pub fn step(&mut self, a: &[f64]) -> Result<(EnvState, RewardBreakdown, Termination)> {
        if self.status != Termination::Running {
            return Err(Error::Runtime(
                "cannot step a terminated environment; reset first".into(),
            ));
        }
        let (gen, next_gait) = self.decoder.decode_primitive(&self.seed, &self.gait, a)?;
        let prim = MotionPrimitive::new(&self.seed, gen);
        let new_time = self.time + STEP_SECONDS;
        let grids = self.grids_at(new_time)?;

        let last = prim.frames.last().expect("primitive has frames");
        let pelvis = last.pelvis_xy();
        let d_new = pelvis.dist(self.goal);

        let (floor, skate) = r_contact(&prim.frames);
        let o_b = derive_forward(last)?;
        let view = derive_view(last, next_gait.head_pitch)?;
        let eye = last.eye_mid_xy();
        let eye_z = (last.positions[marker::EYE_L][2] + last.positions[marker::EYE_R][2]) / 2.0;
        let head = [eye.x, eye.y, eye_z];

        let (pene, violated) = match self.cfg.mode {
            Mode::Sparse => {
                let raw = r_pene_sparse(&grids.0, &prim.frames);
                (raw, raw == 0.0)
            }
            Mode::Crowded => {
                let (raw, max_count) =
                    crowded_penetration(&grids.1, &prim.frames, &self.decoder, &mut self.scratch);
                let cap = self.cfg.pene_term_fraction
                    * self.decoder.cfg.body_sample_points as f64;
                (raw, max_count as f64 >= cap)
            }
        };

        let raw = RawRewards {
            floor,
            skate,
            dist: r_dist(self.d, d_new),
            ori: r_ori(o_b, pelvis, self.goal),
            attention: r_attention(view, head, self.attention_goal, self.cfg.attention_cosine),
            pene,
            pose: r_pose(pose_score(a, self.decoder.cfg.pose_beta)),
            succ: r_succ(d_new),
        };
        let breakdown = total_reward(&raw, &self.cfg.weights, self.stage);

        self.seed = prim.tail_seed();
        self.gait = next_gait;
        self.d = d_new;
        self.tau -= 1;
        self.time = new_time;
        self.status = resolve_termination(d_new, violated, self.tau, &self.cfg, self.stage);
        self.last_prim = Some(prim);

        Ok((self.observe()?, breakdown, self.status))
    }
}
