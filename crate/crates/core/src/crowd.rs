//! Multi-agent composition of learned motion primitives: agents take turns
//! within lockstep rounds, each seeing the others as axis-aligned bounding
//! boxes that enter both its ray sensing and its penetration field. Also the
//! scripted-obstacle scenario builders.

use std::sync::Arc;

use crate::body::{Decoder, MarkerFrame, MotionPrimitive};
use crate::env::{Env, EnvConfig, RewardBreakdown, Stage, Termination};
use crate::geom::{Aabb, Pose2, Vec2};
use crate::nn::Params;
use crate::policy::Policy;
use crate::scene::SceneMap;
use crate::sensing::SensingConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Inflation added around the marker hull when agents are represented as
/// boxes for mutual avoidance.
pub const AGENT_BBOX_MARGIN: f64 = 0.05;

/// Minimum pairwise separation between scenario start positions.
pub const MIN_START_SEPARATION: f64 = 0.5;

/// Tight (x, y) bounds over all markers of the given frames, inflated by
/// `margin`.
pub fn agent_bbox(seed: &[MarkerFrame], margin: f64) -> Result<Aabb> {
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for f in seed {
        for p in &f.positions {
            min.x = min.x.min(p[0]);
            min.y = min.y.min(p[1]);
            max.x = max.x.max(p[0]);
            max.y = max.y.max(p[1]);
        }
    }
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::Validation("agent bounding box needs at least one frame".into()));
    }
    Ok(Aabb::new(min, max).inflated(margin))
}

#[derive(Debug, Clone)]
pub struct CrowdScenario {
    pub scene: Arc<SceneMap>,
    /// (start pose, goal) per agent.
    pub agents: Vec<(Pose2, Vec2)>,
    /// Primitive count per agent (round count).
    pub max_steps: usize,
}

/// On-disk scenario schema: the scene schema plus `agents` and `max_steps`.
#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    agents: Vec<AgentSpec>,
    #[serde(default = "default_max_steps")]
    max_steps: usize,
}

fn default_max_steps() -> usize {
    24
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentSpec {
    start: [f64; 3],
    goal: [f64; 2],
}

impl CrowdScenario {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.agents.is_empty() {
            return Err(Error::Validation("scenario needs at least one agent".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Validation("scenario max_steps must be positive".into()));
        }
        for (i, (start, goal)) in self.agents.iter().enumerate() {
            if !self.scene.walkable(start.pos, 0.0) {
                return Err(Error::Validation(format!(
                    "agent {i} start ({}, {}) is not walkable",
                    start.pos.x, start.pos.y
                )));
            }
            if !self.scene.walkable(*goal, 0.0) {
                return Err(Error::Validation(format!(
                    "agent {i} goal ({}, {}) is not walkable",
                    goal.x, goal.y
                )));
            }
        }
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                let d = self.agents[i].0.pos.dist(self.agents[j].0.pos);
                if d < MIN_START_SEPARATION {
                    return Err(Error::Validation(format!(
                        "agents {i} and {j} start {d:.3} m apart (minimum {MIN_START_SEPARATION})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<CrowdScenario> {
        let scene = SceneMap::from_json(text)?;
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: String::new(),
            detail: e.to_string(),
        })?;
        let scenario = CrowdScenario {
            scene: Arc::new(scene),
            agents: file
                .agents
                .iter()
                .map(|a| {
                    (
                        Pose2::new(a.start[0], a.start[1], a.start[2]),
                        Vec2::new(a.goal[0], a.goal[1]),
                    )
                })
                .collect(),
            max_steps: file.max_steps,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<CrowdScenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let s = &self.scene;
        let statics: Vec<serde_json::Value> = s
            .static_obstacles
            .iter()
            .map(|b| {
                serde_json::json!({
                    "center": [b.center().x, b.center().y],
                    "extents": [b.extents().x, b.extents().y],
                })
            })
            .collect();
        let moving: Vec<serde_json::Value> = s
            .moving_obstacles
            .iter()
            .map(|m| {
                serde_json::json!({
                    "extents": [m.extents.x, m.extents.y],
                    "waypoints": m.script.waypoints.iter()
                        .map(|(t, p)| serde_json::json!({"t": t, "center": [p.x, p.y]}))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        let agents: Vec<serde_json::Value> = self
            .agents
            .iter()
            .map(|(p, g)| {
                serde_json::json!({
                    "start": [p.pos.x, p.pos.y, p.heading],
                    "goal": [g.x, g.y],
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "bounds": [s.bounds.min.x, s.bounds.min.y, s.bounds.max.x, s.bounds.max.y],
            "cell_size": s.cell_size,
            "static": statics,
            "moving": moving,
            "walkable_margin": s.walkable_margin,
            "agents": agents,
            "max_steps": self.max_steps,
        }))
        .expect("scenario serializes")
    }
}

/// Intra-round visibility of other agents' boxes: `Running` exposes each
/// agent's latest completed primitive (so agents earlier in the round are
/// already seen at their new position); `PreRound` freezes all boxes at the
/// round boundary, which makes symmetric scenarios exactly symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensingRefresh {
    Running,
    PreRound,
}

#[derive(Debug, Clone)]
pub struct AgentTrack {
    pub start: Pose2,
    pub goal: Vec2,
    /// (start time, primitive) per round the agent acted in.
    pub primitives: Vec<(f64, MotionPrimitive)>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<RewardBreakdown>,
    pub term: Termination,
}

#[derive(Debug, Clone)]
pub struct CrowdTrajectory {
    pub agents: Vec<AgentTrack>,
    pub rounds: usize,
    /// Instrumentation: `consumed[round][agent]` lists the (other id, box)
    /// pairs visible to that agent when it sensed, in id order. Empty inner
    /// lists mark agents that did not act that round.
    pub consumed: Vec<Vec<Vec<(usize, Aabb)>>>,
}

/// Sequential per-agent crowd stepping with greedy (policy-mean) actions.
pub struct CrowdSim<'a> {
    pub policy: &'a Policy,
    pub params: &'a Params,
    pub decoder: Arc<Decoder>,
    pub sensing: SensingConfig,
    pub env_cfg: EnvConfig,
    pub stage: Stage,
    pub refresh: SensingRefresh,
}

impl CrowdSim<'_> {
    /// Run the scenario to completion (success/penetration/timeout per
    /// agent). Agents act in index order within each round; terminated
    /// agents hold their final pose as a static box for the others.
    pub fn run(&self, scenario: &CrowdScenario) -> Result<CrowdTrajectory> {
        scenario.validate()?;
        let c_n = scenario.agents.len();
        let mut cfg = self.env_cfg.clone();
        cfg.max_steps = scenario.max_steps;

        let mut envs = Vec::with_capacity(c_n);
        let mut boxes = Vec::with_capacity(c_n);
        let mut tracks = Vec::with_capacity(c_n);
        for (i, (start, goal)) in scenario.agents.iter().enumerate() {
            let mut env = Env::new(
                Arc::clone(&scenario.scene),
                Arc::clone(&self.decoder),
                self.sensing.clone(),
                cfg.clone(),
                self.stage,
            )?;
            env.reset(*start, *goal)
                .map_err(|e| Error::Validation(format!("agent {i}: {e}")))?;
            boxes.push(agent_bbox(env.seed_frames(), AGENT_BBOX_MARGIN)?);
            envs.push(env);
            tracks.push(AgentTrack {
                start: *start,
                goal: *goal,
                primitives: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
                term: Termination::Running,
            });
        }

        let mut consumed = Vec::new();
        let mut rounds = 0usize;
        for _round in 1..=scenario.max_steps {
            if tracks.iter().all(|t| t.term != Termination::Running) {
                break;
            }
            let snapshot = boxes.clone();
            let mut round_boxes: Vec<Vec<(usize, Aabb)>> = vec![Vec::new(); c_n];
            for c in 0..c_n {
                if tracks[c].term != Termination::Running {
                    continue;
                }
                let others: Vec<(usize, Aabb)> = (0..c_n)
                    .filter(|&j| j != c)
                    .map(|j| {
                        let b = match self.refresh {
                            SensingRefresh::Running => boxes[j],
                            SensingRefresh::PreRound => snapshot[j],
                        };
                        (j, b)
                    })
                    .collect();
                round_boxes[c] = others.clone();
                if !others.is_empty() {
                    let mut aug = (*scenario.scene).clone();
                    aug.static_obstacles.extend(others.iter().map(|(_, b)| *b));
                    envs[c]
                        .set_scene(Arc::new(aug))
                        .map_err(|e| Error::Runtime(format!("agent {c}: {e}")))?;
                }
                let state = envs[c]
                    .observe()
                    .map_err(|e| Error::Runtime(format!("agent {c}: {e}")))?;
                let obs = self.policy.canonical_obs(&state)?;
                let action = self.policy.forward(self.params, &obs).mu;
                let t0 = envs[c].time();
                let (_, reward, term) = envs[c]
                    .step(&action)
                    .map_err(|e| Error::Runtime(format!("agent {c}: {e}")))?;
                let prim = envs[c].last_primitive().expect("stepped").clone();
                tracks[c].primitives.push((t0, prim));
                tracks[c].actions.push(action);
                tracks[c].rewards.push(reward);
                tracks[c].term = if term == Termination::Running {
                    Termination::Running
                } else {
                    term
                };
                boxes[c] = agent_bbox(envs[c].seed_frames(), AGENT_BBOX_MARGIN)?;
            }
            consumed.push(round_boxes);
            rounds += 1;
        }

        Ok(CrowdTrajectory {
            agents: tracks,
            rounds,
            consumed,
        })
    }
}

/// Starts evenly spaced on a circle, each goal the antipode of its start,
/// in an otherwise empty scene.
pub fn build_crossing_scenario(c: usize, radius: f64) -> Result<CrowdScenario> {
    if c < 2 {
        return Err(Error::Validation(format!(
            "crossing scenario needs at least 2 agents, got {c}"
        )));
    }
    if !(radius > 1.0) {
        return Err(Error::Validation(format!(
            "crossing radius must exceed 1 m, got {radius}"
        )));
    }
    let half = radius + 3.0;
    let scene = SceneMap::new(
        Aabb::new(Vec2::new(-half, -half), Vec2::new(half, half)),
        0.1,
    );
    let agents = (0..c)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / c as f64;
            let pos = Vec2::new(radius * theta.cos(), radius * theta.sin());
            // Face the antipodal goal across the origin.
            let heading = (theta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI);
            (Pose2::new(pos.x, pos.y, heading), Vec2::new(-pos.x, -pos.y))
        })
        .collect();
    let max_steps = ((2.0 * radius / 0.3).ceil() as usize).max(24);
    let scenario = CrowdScenario {
        scene: Arc::new(scene),
        agents,
        max_steps,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Half-sweep of the oscillating obstacle on each side of the start–goal
/// segment's midpoint.
pub const OBSTACLE_SWEEP: f64 = 2.0;

/// Full (x, y) side lengths of the scripted obstacle box.
pub const OBSTACLE_EXTENTS: f64 = 0.6;

/// One agent walking start → goal with a box oscillating perpendicular
/// across the segment midpoint at the given speed (period 2·travel/speed for
/// the 2·`OBSTACLE_SWEEP` travel). Speed 0 degenerates to a static box at
/// the midpoint.
pub fn build_moving_obstacle_scenario(start: Pose2, goal: Vec2, speed: f64) -> Result<CrowdScenario> {
    let span = goal - start.pos;
    let dist = span.norm();
    if dist < 1e-9 {
        return Err(Error::Validation("start and goal must differ".into()));
    }
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(Error::Validation(format!("obstacle speed must be finite and ≥ 0, got {speed}")));
    }
    let mid = Vec2::new(
        (start.pos.x + goal.x) / 2.0,
        (start.pos.y + goal.y) / 2.0,
    );
    let u = Vec2::new(-span.y / dist, span.x / dist);
    let a = OBSTACLE_SWEEP;
    let max_steps = ((dist / 0.3).ceil() as usize).max(24);

    let lo = Vec2::new(
        start.pos.x.min(goal.x).min(mid.x - a * u.x.abs()) - 4.0,
        start.pos.y.min(goal.y).min(mid.y - a * u.y.abs()) - 4.0,
    );
    let hi = Vec2::new(
        start.pos.x.max(goal.x).max(mid.x + a * u.x.abs()) + 4.0,
        start.pos.y.max(goal.y).max(mid.y + a * u.y.abs()) + 4.0,
    );
    let mut scene = SceneMap::new(Aabb::new(lo, hi), 0.1);
    let ext = Vec2::new(OBSTACLE_EXTENTS, OBSTACLE_EXTENTS);
    if speed == 0.0 {
        scene.static_obstacles.push(Aabb::from_center_extents(mid, ext));
    } else {
        // Piecewise-linear oscillation: mid → +sweep → −sweep → +sweep …,
        // covering the episode horizon and at least a few full periods.
        let period = 2.0 * (2.0 * a) / speed;
        let horizon = (max_steps as f64 * crate::env::STEP_SECONDS + 1.0).max(2.5 * period);
        let mut waypoints = vec![(0.0, mid)];
        let mut t = a / speed;
        let mut sign = 1.0;
        while waypoints.last().unwrap().0 < horizon {
            waypoints.push((t, Vec2::new(mid.x + sign * a * u.x, mid.y + sign * a * u.y)));
            t += 2.0 * a / speed;
            sign = -sign;
        }
        scene.moving_obstacles.push(crate::scene::MovingObstacle {
            extents: ext,
            script: crate::scene::ObstacleScript { waypoints },
        });
    }
    let scenario = CrowdScenario {
        scene: Arc::new(scene),
        agents: vec![(start, goal)],
        max_steps,
    };
    scenario.validate()?;
    Ok(scenario)
}
