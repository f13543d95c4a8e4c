//! Trajectory serialization and deterministic replay. A trajectory file is
//! line-delimited JSON: a header line binding the run configuration (by
//! content hash), master seed, scene, and checkpoint, then per-agent blocks
//! of one motion primitive per line. Replay re-executes the recorded policy
//! and verifies bit-exact regeneration, reporting the first divergent step.

use std::io::{BufRead, Write as IoWrite};
use std::path::Path;
use std::sync::Arc;

use crate::body::{Decoder, MotionPrimitive};
use crate::config::RunConfig;
use crate::crowd::{CrowdScenario, CrowdSim, CrowdTrajectory, SensingRefresh};
use crate::env::{Env, RewardBreakdown, Stage, Termination};
use crate::geom::{Pose2, Vec2};
use crate::nn::Params;
use crate::policy::{sample_action, Policy};
use crate::rng::{fnv1a64, stream};
use crate::scene::SceneMap;
use crate::trainer::Checkpoint;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const TRAJ_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Mean,
    Stochastic,
}

/// One agent's recorded episode.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub agent: usize,
    pub stage: Stage,
    pub start: Pose2,
    pub goal: Vec2,
    pub action_mode: ActionMode,
    /// (purpose, a, b) of the action-sampling stream; unused for mean mode.
    pub stream: (String, u64, u64),
    pub steps: Vec<TrajStep>,
    pub term: Termination,
}

#[derive(Debug, Clone)]
pub struct TrajStep {
    pub index: usize,
    pub t0: f64,
    pub action: Vec<f64>,
    pub reward: RewardBreakdown,
    pub term: Termination,
    pub prim: MotionPrimitive,
}

impl Trajectory {
    /// Final pelvis–goal distance in the floor plane.
    pub fn final_distance(&self) -> f64 {
        match self.steps.last() {
            Some(s) => {
                let p = s.prim.frames.last().expect("frames").pelvis_xy();
                p.dist(self.goal)
            }
            None => self.start.pos.dist(self.goal),
        }
    }

    /// The contiguous frame sequence with timestamps: the first primitive's
    /// seed frames, then every primitive's generated frames (later seeds
    /// duplicate earlier tails and are skipped).
    pub fn frames(&self) -> Vec<(f64, crate::body::MarkerFrame)> {
        let mut out = Vec::new();
        for (k, s) in self.steps.iter().enumerate() {
            if k == 0 {
                for (j, f) in s.prim.seed().iter().enumerate() {
                    let t = s.t0 - (s.prim.seed().len() - 1 - j) as f64 * crate::body::DT;
                    out.push((t, f.clone()));
                }
            }
            for (j, f) in s.prim.generated().iter().enumerate() {
                out.push((s.t0 + (j + 1) as f64 * crate::body::DT, f.clone()));
            }
        }
        out
    }

    /// Pelvis floor-plane path over `frames()`.
    pub fn pelvis_path(&self) -> Vec<Vec2> {
        self.frames().iter().map(|(_, f)| f.pelvis_xy()).collect()
    }
}

/// A trajectory file: provenance header plus one or more agent tracks.
#[derive(Debug, Clone)]
pub struct TrajFile {
    pub config: RunConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub scene_path: String,
    pub scene: Arc<SceneMap>,
    pub checkpoint_path: String,
    pub checkpoint_hash: String,
    /// Primitive budget of the recorded run (overrides config.env.max_steps).
    pub max_steps: usize,
    pub refresh: SensingRefresh,
    pub agents: Vec<Trajectory>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "t")]
enum Line {
    #[serde(rename = "h")]
    Header {
        version: u32,
        config_hash: String,
        config_json: String,
        master_seed: u64,
        scene_path: String,
        scene_json: String,
        checkpoint_path: String,
        checkpoint_hash: String,
        max_steps: usize,
        refresh: SensingRefresh,
        n_agents: usize,
    },
    #[serde(rename = "a")]
    Agent {
        agent: usize,
        stage: Stage,
        start: [f64; 3],
        goal: [f64; 2],
        action_mode: ActionMode,
        stream_purpose: String,
        stream_a: u64,
        stream_b: u64,
        term: Termination,
        n_steps: usize,
    },
    #[serde(rename = "s")]
    Step {
        agent: usize,
        index: usize,
        t0: f64,
        action: Vec<f64>,
        reward: RewardBreakdown,
        term: Termination,
        prim: MotionPrimitive,
    },
}

/// Stable content hash of a checkpoint's parameter payload.
pub fn checkpoint_hash(ck: &Checkpoint) -> String {
    format!("{:016x}", fnv1a64(ck.params_json.as_bytes()))
}

fn scene_to_json(s: &SceneMap) -> String {
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
    serde_json::to_string(&serde_json::json!({
        "bounds": [s.bounds.min.x, s.bounds.min.y, s.bounds.max.x, s.bounds.max.y],
        "cell_size": s.cell_size,
        "static": statics,
        "moving": moving,
        "walkable_margin": s.walkable_margin,
    }))
    .expect("scene serializes")
}

impl TrajFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = Line::Header {
            version: TRAJ_VERSION,
            config_hash: self.config_hash.clone(),
            config_json: self.config.to_json(),
            master_seed: self.master_seed,
            scene_path: self.scene_path.clone(),
            scene_json: scene_to_json(&self.scene),
            checkpoint_path: self.checkpoint_path.clone(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            max_steps: self.max_steps,
            refresh: self.refresh,
            n_agents: self.agents.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header"))?;
        for traj in &self.agents {
            let agent_line = Line::Agent {
                agent: traj.agent,
                stage: traj.stage,
                start: [traj.start.pos.x, traj.start.pos.y, traj.start.heading],
                goal: [traj.goal.x, traj.goal.y],
                action_mode: traj.action_mode,
                stream_purpose: traj.stream.0.clone(),
                stream_a: traj.stream.1,
                stream_b: traj.stream.2,
                term: traj.term,
                n_steps: traj.steps.len(),
            };
            writeln!(w, "{}", serde_json::to_string(&agent_line).expect("agent"))?;
            for s in &traj.steps {
                let line = Line::Step {
                    agent: traj.agent,
                    index: s.index,
                    t0: s.t0,
                    action: s.action.clone(),
                    reward: s.reward,
                    term: s.term,
                    prim: s.prim.clone(),
                };
                writeln!(w, "{}", serde_json::to_string(&line).expect("step"))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrajFile> {
        let parse_err = |detail: String| Error::Parse {
            path: path.display().to_string(),
            detail,
        };
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| parse_err("empty trajectory file".into()))??;
        let header: Line =
            serde_json::from_str(&first).map_err(|e| parse_err(format!("header: {e}")))?;
        let Line::Header {
            version,
            config_hash,
            config_json,
            master_seed,
            scene_path,
            scene_json,
            checkpoint_path,
            checkpoint_hash: ck_hash,
            max_steps,
            refresh,
            n_agents,
        } = header
        else {
            return Err(parse_err("first line is not a header".into()));
        };
        if version != TRAJ_VERSION {
            return Err(parse_err(format!(
                "unsupported trajectory version {version} (expected {TRAJ_VERSION})"
            )));
        }
        // Refuse tampered or stale provenance before re-executing anything.
        let actual = format!("{:016x}", fnv1a64(config_json.as_bytes()));
        if actual != config_hash {
            return Err(Error::Validation(format!(
                "config hash mismatch: header says {config_hash}, embedded config hashes to {actual}"
            )));
        }
        let config = RunConfig::from_json(&config_json)?;
        let scene = Arc::new(SceneMap::from_json(&scene_json)?);

        let mut agents: Vec<Trajectory> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| parse_err(format!("record: {e}")))?;
            match parsed {
                Line::Header { .. } => {
                    return Err(parse_err("duplicate header line".into()));
                }
                Line::Agent {
                    agent,
                    stage,
                    start,
                    goal,
                    action_mode,
                    stream_purpose,
                    stream_a,
                    stream_b,
                    term,
                    n_steps: _,
                } => {
                    agents.push(Trajectory {
                        agent,
                        stage,
                        start: Pose2::new(start[0], start[1], start[2]),
                        goal: Vec2::new(goal[0], goal[1]),
                        action_mode,
                        stream: (stream_purpose, stream_a, stream_b),
                        steps: Vec::new(),
                        term,
                    });
                }
                Line::Step {
                    agent,
                    index,
                    t0,
                    action,
                    reward,
                    term,
                    prim,
                } => {
                    let track = agents
                        .iter_mut()
                        .find(|t| t.agent == agent)
                        .ok_or_else(|| parse_err(format!("step for unknown agent {agent}")))?;
                    track.steps.push(TrajStep {
                        index,
                        t0,
                        action,
                        reward,
                        term,
                        prim,
                    });
                }
            }
        }
        if agents.len() != n_agents {
            return Err(parse_err(format!(
                "header promises {n_agents} agents, file has {}",
                agents.len()
            )));
        }
        for t in &agents {
            for (k, s) in t.steps.iter().enumerate() {
                if s.index != k {
                    return Err(parse_err(format!(
                        "agent {} steps out of order at {k}",
                        t.agent
                    )));
                }
            }
        }
        Ok(TrajFile {
            config,
            config_hash,
            master_seed,
            scene_path,
            scene,
            checkpoint_path,
            checkpoint_hash: ck_hash,
            max_steps,
            refresh,
            agents,
        })
    }
}

/// Drive one episode in `env` (already constructed; this resets it) and
/// record every step. Mean mode takes the policy mean; stochastic mode
/// samples from the stream identified by `(purpose, a, b)` under
/// `master_seed`, which is all replay needs to regenerate it.
pub fn rollout_episode(
    env: &mut Env,
    policy: &Policy,
    params: &Params,
    master_seed: u64,
    start: Pose2,
    goal: Vec2,
    mode: ActionMode,
    stream_key: (String, u64, u64),
) -> Result<Trajectory> {
    let mut state = env.reset(start, goal)?;
    let mut rng = stream(master_seed, &stream_key.0, stream_key.1, stream_key.2);
    let mut steps = Vec::new();
    let mut term = Termination::Running;
    while term == Termination::Running {
        let obs = policy.canonical_obs(&state)?;
        let tr = policy.forward(params, &obs);
        let action = match mode {
            ActionMode::Mean => tr.mu,
            ActionMode::Stochastic => {
                let sigma = policy.sigma(params);
                sample_action(&tr.mu, &sigma, &mut rng).0
            }
        };
        let t0 = env.time();
        let (next, reward, t) = env.step(&action)?;
        steps.push(TrajStep {
            index: steps.len(),
            t0,
            action,
            reward,
            term: t,
            prim: env.last_primitive().expect("stepped").clone(),
        });
        state = next;
        term = t;
    }
    Ok(Trajectory {
        agent: 0,
        stage: env.stage,
        start,
        goal,
        action_mode: mode,
        stream: stream_key,
        steps,
        term,
    })
}

/// Map a finished crowd run into per-agent trajectories (crowd actions are
/// always the policy mean).
pub fn from_crowd(crowd: &CrowdTrajectory, stage: Stage) -> Vec<Trajectory> {
    crowd
        .agents
        .iter()
        .enumerate()
        .map(|(i, track)| Trajectory {
            agent: i,
            stage,
            start: track.start,
            goal: track.goal,
            action_mode: ActionMode::Mean,
            stream: (String::new(), 0, 0),
            steps: track
                .primitives
                .iter()
                .zip(&track.actions)
                .zip(&track.rewards)
                .enumerate()
                .map(|(k, (((t0, prim), action), reward))| TrajStep {
                    index: k,
                    t0: *t0,
                    action: action.clone(),
                    reward: *reward,
                    term: if k + 1 == track.primitives.len() {
                        track.term
                    } else {
                        Termination::Running
                    },
                    prim: prim.clone(),
                })
                .collect(),
            term: track.term,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayOutcome {
    Match,
    Mismatch {
        agent: usize,
        step: usize,
        what: String,
    },
}

fn compare_step(
    agent: usize,
    index: usize,
    recorded: &TrajStep,
    action: &[f64],
    prim: &MotionPrimitive,
    reward_total: f64,
) -> Option<ReplayOutcome> {
    if recorded.action != action {
        return Some(ReplayOutcome::Mismatch {
            agent,
            step: index,
            what: "action".into(),
        });
    }
    if recorded.prim != *prim {
        return Some(ReplayOutcome::Mismatch {
            agent,
            step: index,
            what: "primitive frames".into(),
        });
    }
    if recorded.reward.total != reward_total {
        return Some(ReplayOutcome::Mismatch {
            agent,
            step: index,
            what: "reward".into(),
        });
    }
    None
}

/// Re-execute the recorded run from its provenance (config, scene, seed,
/// checkpoint) and compare step by step. Returns the first divergence, or
/// `Match` when the whole file regenerates bit-exactly.
pub fn replay(file: &TrajFile, ck: &Checkpoint) -> Result<ReplayOutcome> {
    let actual = checkpoint_hash(ck);
    if actual != file.checkpoint_hash {
        return Err(Error::Validation(format!(
            "checkpoint hash mismatch: trajectory expects {}, file has {actual}",
            file.checkpoint_hash
        )));
    }
    let mut params = Params::new();
    let policy = Policy::new(&mut params, file.config.policy.clone())?;
    ck.restore_into(&mut params)?;
    let decoder = Arc::new(Decoder::new(file.config.decoder.clone())?);
    let mut env_cfg = file.config.env.clone();
    env_cfg.max_steps = file.max_steps;

    if file.agents.len() == 1 {
        let traj = &file.agents[0];
        let mut env = Env::new(
            Arc::clone(&file.scene),
            decoder,
            file.config.sensing.clone(),
            env_cfg,
            traj.stage,
        )?;
        let mut state = env.reset(traj.start, traj.goal)?;
        let mut rng = stream(
            file.master_seed,
            &traj.stream.0,
            traj.stream.1,
            traj.stream.2,
        );
        for (k, rec) in traj.steps.iter().enumerate() {
            let obs = policy.canonical_obs(&state)?;
            let tr = policy.forward(&params, &obs);
            let action = match traj.action_mode {
                ActionMode::Mean => tr.mu,
                ActionMode::Stochastic => {
                    let sigma = policy.sigma(&params);
                    sample_action(&tr.mu, &sigma, &mut rng).0
                }
            };
            let (next, reward, term) = env.step(&action)?;
            let prim = env.last_primitive().expect("stepped").clone();
            if let Some(m) = compare_step(0, k, rec, &action, &prim, reward.total) {
                return Ok(m);
            }
            state = next;
            if term != Termination::Running {
                if k + 1 < traj.steps.len() {
                    return Ok(ReplayOutcome::Mismatch {
                        agent: 0,
                        step: k,
                        what: "early termination".into(),
                    });
                }
                if term != traj.term {
                    return Ok(ReplayOutcome::Mismatch {
                        agent: 0,
                        step: k,
                        what: "termination kind".into(),
                    });
                }
            }
        }
        if env.status() == Termination::Running {
            return Ok(ReplayOutcome::Mismatch {
                agent: 0,
                step: traj.steps.len(),
                what: "recorded episode ends before termination".into(),
            });
        }
        return Ok(ReplayOutcome::Match);
    }

    // Multi-agent: rebuild the scenario and rerun the crowd composition.
    let scenario = CrowdScenario {
        scene: Arc::clone(&file.scene),
        agents: file.agents.iter().map(|t| (t.start, t.goal)).collect(),
        max_steps: file.max_steps,
    };
    let sim = CrowdSim {
        policy: &policy,
        params: &params,
        decoder,
        sensing: file.config.sensing.clone(),
        env_cfg: file.config.env.clone(),
        stage: file.agents[0].stage,
        refresh: file.refresh,
    };
    let rerun = sim.run(&scenario)?;
    // Round-major comparison finds the earliest divergence in execution order.
    let max_rounds = rerun
        .agents
        .iter()
        .map(|t| t.primitives.len())
        .max()
        .unwrap_or(0)
        .max(file.agents.iter().map(|t| t.steps.len()).max().unwrap_or(0));
    for round in 0..max_rounds {
        for (c, (track, rec)) in rerun.agents.iter().zip(&file.agents).enumerate() {
            let have = round < track.primitives.len();
            let want = round < rec.steps.len();
            if have != want {
                return Ok(ReplayOutcome::Mismatch {
                    agent: c,
                    step: round,
                    what: "episode length".into(),
                });
            }
            if !have {
                continue;
            }
            let (_, prim) = &track.primitives[round];
            if let Some(m) = compare_step(
                c,
                round,
                &rec.steps[round],
                &track.actions[round],
                prim,
                track.rewards[round].total,
            ) {
                return Ok(m);
            }
        }
    }
    for (c, (track, rec)) in rerun.agents.iter().zip(&file.agents).enumerate() {
        if track.term != rec.term {
            return Ok(ReplayOutcome::Mismatch {
                agent: c,
                step: rec.steps.len().saturating_sub(1),
                what: "termination kind".into(),
            });
        }
    }
    Ok(ReplayOutcome::Match)
}

/// Load a trajectory file, locate its checkpoint (as written, or relative to
/// the trajectory's directory), and verify it by re-execution.
pub fn verify_file(path: &Path) -> Result<(TrajFile, ReplayOutcome)> {
    let file = TrajFile::load(path)?;
    let ck_path = std::path::PathBuf::from(&file.checkpoint_path);
    let resolved = if ck_path.exists() {
        ck_path
    } else {
        let sibling = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&file.checkpoint_path);
        if !sibling.exists() {
            return Err(Error::Validation(format!(
                "checkpoint {} not found (tried as-is and next to the trajectory)",
                file.checkpoint_path
            )));
        }
        sibling
    };
    let ck = Checkpoint::load(&resolved)?;
    let outcome = replay(&file, &ck)?;
    Ok((file, outcome))
}
