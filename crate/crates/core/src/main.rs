//! Command-line surface: `train`, `eval`, `crowd`, `replay`, and `plot`.
//! Exit codes: 0 success, 1 validation/config errors, 2 runtime errors.
//! `CAMPSIM_THREADS` caps the worker threads used for evaluation rollouts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use campsim::body::Decoder;
use campsim::config::RunConfig;
use campsim::crowd::{CrowdScenario, CrowdSim, SensingRefresh};
use campsim::env::{Env, Mode, Stage};
use campsim::geom::Vec2;
use campsim::metrics::{self, MetricsReport};
use campsim::nn::Params;
use campsim::policy::Policy;
use campsim::rng::stream;
use campsim::scenarios::{self, UniformFreeSpace};
use campsim::scene::SceneMap;
use campsim::traj::{
    checkpoint_hash, from_crowd, rollout_episode, verify_file, ActionMode, TrajFile, Trajectory,
};
use campsim::trainer::{
    select_checkpoint, Checkpoint, EpochLog, StageInit, StagePlan, StartGoalSampler, Trainer,
};
use campsim::{Error, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "campsim",
    version,
    about = "Desk-scale trainer and simulator for sensing-driven human navigation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one stage and write checkpoints plus an epoch log.
    Train {
        /// Run configuration file (JSON; missing fields take defaults).
        #[arg(long)]
        config: PathBuf,
        /// 1 = pretraining (loose penetration), 2 = finetuning (strict).
        #[arg(long)]
        stage: u8,
        /// Checkpoint to continue from (required for stage 2).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Master seed; every stream the run uses derives from it.
        #[arg(long)]
        seed: u64,
        /// Training scene file(s); defaults to the empty 10x10 m arena.
        #[arg(long = "scene")]
        scenes: Vec<PathBuf>,
        /// Epoch budget for this stage.
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Output directory for checkpoints and logs.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint over scene(s) with mean actions.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene file or directory of scene files.
        #[arg(long)]
        scenes: PathBuf,
        /// Episodes per scene.
        #[arg(long)]
        episodes: usize,
        /// Metrics report destination (JSON).
        #[arg(long)]
        report: PathBuf,
        /// Run configuration; must match the one the checkpoint was trained
        /// with. Defaults to the built-in configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write one replayable trajectory file per episode here.
        #[arg(long)]
        traj_dir: Option<PathBuf>,
        /// Extra stochastic rollouts of one fixed pair for the diversity
        /// metric (0 disables).
        #[arg(long, default_value_t = 0)]
        diversity_rollouts: usize,
    },
    /// Run a multi-agent or moving-obstacle scenario with a trained policy.
    Crowd {
        /// Scenario file: scene schema plus an `agents` array.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Trajectory file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-execute a trajectory file and verify bit-exact regeneration.
    Replay {
        #[arg(long)]
        traj: PathBuf,
    },
    /// Render metric traces or evaluation overlays as SVG.
    Plot {
        /// A training epoch log (.jsonl) or an eval report (.json).
        #[arg(long)]
        report: PathBuf,
        /// Output directory for the SVG files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits; usage mistakes are
            // validation failures (exit 1), not runtime errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train {
            config,
            stage,
            resume,
            seed,
            scenes,
            epochs,
            out,
        } => cmd_train(&config, stage, resume.as_deref(), seed, &scenes, epochs, &out),
        Cmd::Eval {
            ckpt,
            scenes,
            episodes,
            report,
            config,
            seed,
            traj_dir,
            diversity_rollouts,
        } => cmd_eval(
            &ckpt,
            &scenes,
            episodes,
            &report,
            config.as_deref(),
            seed,
            traj_dir.as_deref(),
            diversity_rollouts,
        ),
        Cmd::Crowd {
            scenario,
            ckpt,
            out,
            config,
            seed,
        } => cmd_crowd(&scenario, &ckpt, &out, config.as_deref(), seed),
        Cmd::Replay { traj } => cmd_replay(&traj),
        Cmd::Plot { report, out } => cmd_plot(&report, &out),
    }
}

/// Worker threads for evaluation rollouts: `CAMPSIM_THREADS`, else the
/// machine's parallelism capped at 8.
fn thread_count() -> usize {
    std::env::var("CAMPSIM_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get().min(8))
                .unwrap_or(1)
        })
}

/// Run `jobs(0..n)` across scoped threads, preserving index order.
fn parallel_map<T, F>(n: usize, threads: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.min(n.max(1));
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    if threads <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(job(i)?);
        }
    } else {
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let job = &job;
                    scope.spawn(move || {
                        let mut acc = Vec::new();
                        let mut i = t;
                        while i < n {
                            acc.push((i, job(i)));
                            i += threads;
                        }
                        acc
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("eval worker panicked"))
                .collect::<Vec<_>>()
        });
        for (i, r) in results {
            slots[i] = Some(r?);
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("job filled")).collect())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_policy(cfg: &RunConfig, ck: &Checkpoint) -> Result<(Policy, Params)> {
    let mut params = Params::new();
    let policy = Policy::new(&mut params, cfg.policy.clone())?;
    ck.restore_into(&mut params)?;
    Ok((policy, params))
}

// ---------------------------------------------------------------- train ----

fn cmd_train(
    config: &Path,
    stage_no: u8,
    resume: Option<&Path>,
    seed: u64,
    scene_paths: &[PathBuf],
    epochs: usize,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(Some(config))?;
    let stage = match stage_no {
        1 => Stage::Pretrain,
        2 => Stage::Finetune,
        other => {
            return Err(Error::Validation(format!(
                "--stage must be 1 (pretrain) or 2 (finetune), got {other}"
            )))
        }
    };
    let mut scenes = Vec::new();
    if scene_paths.is_empty() {
        scenes.push(Arc::new(scenarios::empty_scene(5.0)));
    } else {
        for p in scene_paths {
            let s = SceneMap::load(p)?;
            s.validate()?;
            scenes.push(Arc::new(s));
        }
    }
    let init_from = match resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let init = if init_from.is_some() {
        StageInit::FromCheckpoint
    } else {
        StageInit::Fresh
    };
    let trainer = Trainer {
        scenes,
        decoder: Arc::new(Decoder::new(cfg.decoder.clone())?),
        env_cfg: cfg.env.clone(),
        sensing: cfg.sensing.clone(),
        policy_cfg: cfg.policy.clone(),
        ppo: cfg.ppo.clone(),
        run: cfg.run.clone(),
        master_seed: seed,
    };
    let plan = StagePlan {
        stage,
        epochs,
        init,
    };
    let sampler = UniformFreeSpace::default();
    println!(
        "training stage {stage_no} for {epochs} epochs, seed {seed}, config {}",
        cfg.hash()
    );
    let output = trainer.train(&plan, init_from.as_ref(), &sampler)?;

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;
    let log_path = out.join(format!("stage{stage_no}_log.jsonl"));
    let mut log_text = String::new();
    for entry in &output.log {
        println!(
            "epoch {:4}  return {:9.3}  SR {:5.1}%  dist {:6.3}  KL {:8.3}  loss {:9.4}{}",
            entry.epoch,
            entry.mean_return,
            entry.success_rate * 100.0,
            entry.mean_final_dist,
            entry.kl_to_prior,
            entry.loss_total,
            if entry.aborted { "  [aborted update]" } else { "" }
        );
        log_text.push_str(&serde_json::to_string(entry).expect("log entry"));
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)?;

    if output.checkpoints.is_empty() {
        println!("no epochs ran; nothing to select");
        return Ok(());
    }
    let (best, warned) = select_checkpoint(&output.checkpoints, trainer.kappa())?;
    let best_path = out.join(format!("stage{stage_no}_best.json"));
    let last_path = out.join(format!("stage{stage_no}_last.json"));
    best.save(&best_path)?;
    output
        .checkpoints
        .last()
        .expect("non-empty")
        .save(&last_path)?;
    println!(
        "selected epoch {} (eval reward {:.3}, KL {:.3}{}) -> {}",
        best.epoch,
        best.eval_reward,
        best.kl_to_prior,
        if warned {
            "; WARNING: no checkpoint passed the KL gate, picked minimum KL"
        } else {
            ""
        },
        best_path.display()
    );
    if output.early_stopped {
        println!("stage converged early (eval-reward plateau)");
    }
    println!("epoch log: {}", log_path.display());
    Ok(())
}

// ----------------------------------------------------------------- eval ----

#[derive(Debug, Serialize, Deserialize)]
struct SceneSection {
    metrics: MetricsReport,
    trajectories: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalReportFile {
    config_hash: String,
    checkpoint: String,
    checkpoint_hash: String,
    seed: u64,
    episodes: usize,
    stage: Stage,
    scenes: BTreeMap<String, SceneSection>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    ckpt: &Path,
    scenes_path: &Path,
    episodes: usize,
    report_path: &Path,
    config: Option<&Path>,
    seed: u64,
    traj_dir: Option<&Path>,
    diversity_rollouts: usize,
) -> Result<()> {
    if episodes == 0 {
        return Err(Error::Validation("--episodes must be at least 1".into()));
    }
    let cfg = load_config(config)?;
    let ck = Checkpoint::load(ckpt)?;
    let (policy, params) = load_policy(&cfg, &ck)?;
    let decoder = Arc::new(Decoder::new(cfg.decoder.clone())?);
    let scenes: Vec<(String, Arc<SceneMap>)> = if scenes_path.is_dir() {
        scenarios::load_scene_dir(scenes_path)?
    } else {
        let s = SceneMap::load(scenes_path)?;
        s.validate()?;
        let name = scenes_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        vec![(name, Arc::new(s))]
    };
    if let Some(dir) = traj_dir {
        std::fs::create_dir_all(dir)?;
    }
    let threads = thread_count();
    let ck_hash = checkpoint_hash(&ck);
    let sampler = UniformFreeSpace::default();
    let mut report = EvalReportFile {
        config_hash: cfg.hash(),
        checkpoint: ckpt.display().to_string(),
        checkpoint_hash: ck_hash.clone(),
        seed,
        episodes,
        stage: ck.stage,
        scenes: BTreeMap::new(),
    };
    println!(
        "evaluating {} over {} scene(s), {} episodes each, {} thread(s)",
        ckpt.display(),
        scenes.len(),
        episodes,
        threads
    );
    for (scene_idx, (name, scene)) in scenes.iter().enumerate() {
        let salt = scene_idx as u64;
        let run_one = |ep: usize, mode: ActionMode, purpose: &str| -> Result<Trajectory> {
            let mut env = Env::new(
                Arc::clone(scene),
                Arc::clone(&decoder),
                cfg.sensing.clone(),
                cfg.env.clone(),
                ck.stage,
            )?;
            let mut pair_rng = stream(seed, "cli-eval-reset", ep as u64, salt);
            let (start, goal) = loop {
                let (s, g) = sampler.sample(&mut pair_rng, scene);
                if env.reset(s, g).is_ok() {
                    break (s, g);
                }
            };
            rollout_episode(
                &mut env,
                &policy,
                &params,
                seed,
                start,
                goal,
                mode,
                (purpose.to_string(), ep as u64, salt),
            )
        };
        let trajs = parallel_map(episodes, threads, |ep| {
            run_one(ep, ActionMode::Mean, "cli-eval-action")
        })?;
        let mut section = SceneSection {
            metrics: metrics::summarize(&trajs, scene)?,
            trajectories: Vec::new(),
        };
        if diversity_rollouts >= 2 {
            // Re-run one fixed pair stochastically; spread is the diversity.
            let div = parallel_map(diversity_rollouts, threads, |k| {
                let mut env = Env::new(
                    Arc::clone(scene),
                    Arc::clone(&decoder),
                    cfg.sensing.clone(),
                    cfg.env.clone(),
                    ck.stage,
                )?;
                rollout_episode(
                    &mut env,
                    &policy,
                    &params,
                    seed,
                    trajs[0].start,
                    trajs[0].goal,
                    ActionMode::Stochastic,
                    ("cli-diversity".into(), k as u64, salt),
                )
            })?;
            section.metrics.diversity = Some(metrics::path_diversity(&div)?);
        }
        if let Some(dir) = traj_dir {
            for (ep, traj) in trajs.iter().enumerate() {
                let file = TrajFile {
                    config: cfg.clone(),
                    config_hash: cfg.hash(),
                    master_seed: seed,
                    scene_path: format!("{name}.json"),
                    scene: Arc::clone(scene),
                    checkpoint_path: ckpt.display().to_string(),
                    checkpoint_hash: ck_hash.clone(),
                    max_steps: cfg.env.max_steps,
                    refresh: SensingRefresh::Running,
                    agents: vec![traj.clone()],
                };
                let path = dir.join(format!("{name}_ep{ep:03}.traj"));
                file.write(&path)?;
                section.trajectories.push(path.display().to_string());
            }
        }
        let m = &section.metrics;
        println!(
            "{name:>16}  SR {:5.1}%  dist {:6.3} m  contact {:.3}  Pene-S {:5.1}%{}",
            m.success_rate,
            m.final_distance,
            m.contact,
            m.pene_scene,
            match m.diversity {
                Some(d) => format!("  diversity {d:.3} m"),
                None => String::new(),
            }
        );
        report.scenes.insert(name.clone(), section);
    }
    if let Some(parent) = report_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(
        report_path,
        serde_json::to_string_pretty(&report).expect("report"),
    )?;
    println!("report: {}", report_path.display());
    Ok(())
}

// ---------------------------------------------------------------- crowd ----

fn cmd_crowd(
    scenario_path: &Path,
    ckpt: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    // Crowd composition runs the crowded-regime reward set.
    cfg.env.mode = Mode::Crowded;
    let ck = Checkpoint::load(ckpt)?;
    let (policy, params) = load_policy(&cfg, &ck)?;
    let decoder = Arc::new(Decoder::new(cfg.decoder.clone())?);
    let scenario = CrowdScenario::load(scenario_path)?;
    let sim = CrowdSim {
        policy: &policy,
        params: &params,
        decoder: Arc::clone(&decoder),
        sensing: cfg.sensing.clone(),
        env_cfg: cfg.env.clone(),
        stage: ck.stage,
        refresh: SensingRefresh::Running,
    };
    let crowd = sim.run(&scenario)?;
    let agents = from_crowd(&crowd, ck.stage);
    for t in &agents {
        println!(
            "agent {}: {:?} after {} steps, final distance {:.3} m",
            t.agent,
            t.term,
            t.steps.len(),
            t.final_distance()
        );
    }
    if agents.len() >= 2 {
        let pene = metrics::pene_human(&agents, &decoder)?;
        println!("human-penetration score: {pene}");
    }
    let file = TrajFile {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        master_seed: seed,
        scene_path: scenario_path.display().to_string(),
        scene: Arc::clone(&scenario.scene),
        checkpoint_path: ckpt.display().to_string(),
        checkpoint_hash: checkpoint_hash(&ck),
        max_steps: scenario.max_steps,
        refresh: SensingRefresh::Running,
        agents,
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    file.write(out)?;
    println!("trajectory: {}", out.display());
    Ok(())
}

// --------------------------------------------------------------- replay ----

fn cmd_replay(traj: &Path) -> Result<()> {
    let (file, outcome) = verify_file(traj)?;
    match outcome {
        campsim::traj::ReplayOutcome::Match => {
            let steps: usize = file.agents.iter().map(|a| a.steps.len()).sum();
            println!(
                "verified: {} agent(s), {} step(s) regenerate bit-exactly",
                file.agents.len(),
                steps
            );
            Ok(())
        }
        campsim::traj::ReplayOutcome::Mismatch { agent, step, what } => Err(Error::Runtime(
            format!("replay diverged: agent {agent}, step {step}: {what}"),
        )),
    }
}

// ----------------------------------------------------------------- plot ----

fn cmd_plot(report: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(report)?;
    std::fs::create_dir_all(out)?;
    if let Ok(eval) = serde_json::from_str::<EvalReportFile>(&text) {
        return plot_eval(&eval, report, out);
    }
    let mut log = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: EpochLog = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: report.display().to_string(),
            detail: format!("neither an eval report nor an epoch log: {e}"),
        })?;
        log.push(entry);
    }
    if log.is_empty() {
        return Err(Error::Validation("empty epoch log".into()));
    }
    plot_train(&log, out)
}

fn plot_train(log: &[EpochLog], out: &Path) -> Result<()> {
    let epochs: Vec<f64> = log.iter().map(|e| e.epoch as f64).collect();
    let series = |f: fn(&EpochLog) -> f64| -> Vec<f64> { log.iter().map(f).collect() };
    let charts: [(&str, Vec<(&str, &str, Vec<f64>)>); 3] = [
        (
            "returns",
            vec![
                ("mean return", "#2563eb", series(|e| e.mean_return)),
                ("success rate (%)", "#16a34a", series(|e| e.success_rate)),
            ],
        ),
        (
            "losses",
            vec![
                ("clip", "#dc2626", series(|e| e.loss_clip)),
                ("value", "#ea580c", series(|e| e.loss_vf)),
                ("entropy", "#9333ea", series(|e| e.loss_s)),
                ("total", "#111827", series(|e| e.loss_total)),
            ],
        ),
        (
            "divergence",
            vec![
                ("KL to prior", "#0891b2", series(|e| e.kl_to_prior)),
                ("grad norm", "#a16207", series(|e| e.grad_norm_mean)),
            ],
        ),
    ];
    for (name, data) in charts {
        let refs: Vec<(&str, &str, &[f64])> = data
            .iter()
            .map(|(l, c, v)| (*l, *c, v.as_slice()))
            .collect();
        let svg = svg_line_chart(name, &epochs, &refs);
        let path = out.join(format!("{name}.svg"));
        std::fs::write(&path, svg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn plot_eval(eval: &EvalReportFile, report: &Path, out: &Path) -> Result<()> {
    // Metric bars across scenes.
    let svg = svg_metric_bars(eval);
    let path = out.join("metrics.svg");
    std::fs::write(&path, svg)?;
    println!("wrote {}", path.display());
    // Top-down overlays for every scene that has trajectory files.
    let base = report.parent().unwrap_or_else(|| Path::new("."));
    for (name, section) in &eval.scenes {
        if section.trajectories.is_empty() {
            continue;
        }
        let mut scene: Option<Arc<SceneMap>> = None;
        let mut paths = Vec::new();
        for tp in &section.trajectories {
            let as_is = PathBuf::from(tp);
            let resolved = if as_is.exists() { as_is } else { base.join(tp) };
            let file = TrajFile::load(&resolved)?;
            if scene.is_none() {
                scene = Some(Arc::clone(&file.scene));
            }
            for t in file.agents {
                let success = t.final_distance() < metrics::SUCCESS_RADIUS;
                paths.push((t.pelvis_path(), success, t.start.pos, t.goal));
            }
        }
        let scene = scene.expect("non-empty trajectory list");
        let svg = svg_overlay(&scene, &paths);
        let path = out.join(format!("overlay_{name}.svg"));
        std::fs::write(&path, svg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------- svg helpers ----

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn nice_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = (hi - lo) * 0.06;
    (lo - pad, hi + pad)
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

fn svg_line_chart(title: &str, xs: &[f64], series: &[(&str, &str, &[f64])]) -> String {
    let (x0, x1) = nice_range(xs.iter().copied());
    let (y0, y1) = nice_range(series.iter().flat_map(|(_, _, v)| v.iter().copied()));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (CHART_W - 2.0 * MARGIN);
    let sy = |y: f64| CHART_H - MARGIN - (y - y0) / (y1 - y0) * (CHART_H - 2.0 * MARGIN);
    let mut s = svg_open(CHART_W, CHART_H);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        CHART_W / 2.0
    ));
    // Axes and y-grid.
    s.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#444\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#444\"/>\n",
        m = MARGIN,
        r = CHART_W - MARGIN,
        t = MARGIN,
        b = CHART_H - MARGIN
    ));
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let py = sy(y);
        s.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{py:.1}\" x2=\"{r}\" y2=\"{py:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{tx}\" y=\"{ty:.1}\" text-anchor=\"end\">{y:.2}</text>\n",
            m = MARGIN,
            r = CHART_W - MARGIN,
            tx = MARGIN - 6.0,
            ty = py + 4.0
        ));
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        s.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{py2}\" text-anchor=\"middle\">{x:.0}</text>\n",
            px = sx(x),
            py2 = CHART_H - MARGIN + 16.0
        ));
    }
    for (i, (label, color, vals)) in series.iter().enumerate() {
        let pts: String = xs
            .iter()
            .zip(vals.iter())
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y)))
            .collect::<Vec<_>>()
            .join(" ");
        s.push_str(&format!(
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
        ));
        let ly = MARGIN + 14.0 * i as f64;
        s.push_str(&format!(
            "<rect x=\"{lx}\" y=\"{ry:.1}\" width=\"10\" height=\"3\" fill=\"{color}\"/>\n\
             <text x=\"{tx}\" y=\"{ty:.1}\">{label}</text>\n",
            lx = CHART_W - MARGIN - 130.0,
            ry = ly - 2.0,
            tx = CHART_W - MARGIN - 115.0,
            ty = ly + 3.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn svg_metric_bars(eval: &EvalReportFile) -> String {
    let names: Vec<&String> = eval.scenes.keys().collect();
    let groups = [
        ("SR (%)", "#16a34a"),
        ("Pene-S (%)", "#dc2626"),
        ("contact x100", "#2563eb"),
    ];
    let w = (names.len() as f64 * 120.0 + 2.0 * MARGIN).max(CHART_W);
    let mut s = svg_open(w, CHART_H);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">evaluation metrics</text>\n",
        w / 2.0
    ));
    let floor = CHART_H - MARGIN;
    let scale = (CHART_H - 2.0 * MARGIN) / 100.0;
    for (si, name) in names.iter().enumerate() {
        let sec = &eval.scenes[*name];
        let m = &sec.metrics;
        let vals = [m.success_rate, m.pene_scene, m.contact * 100.0];
        let gx = MARGIN + si as f64 * 120.0;
        for (bi, (v, (_, color))) in vals.iter().zip(groups.iter()).enumerate() {
            let h = v.clamp(0.0, 100.0) * scale;
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"24\" height=\"{h:.1}\" fill=\"{color}\"/>\n\
                 <text x=\"{tx:.1}\" y=\"{ty:.1}\" text-anchor=\"middle\" font-size=\"10\">{v:.0}</text>\n",
                x = gx + bi as f64 * 30.0,
                y = floor - h,
                tx = gx + bi as f64 * 30.0 + 12.0,
                ty = floor - h - 3.0
            ));
        }
        s.push_str(&format!(
            "<text x=\"{tx:.1}\" y=\"{ty}\" text-anchor=\"middle\">{name}</text>\n",
            tx = gx + 45.0,
            ty = floor + 16.0
        ));
    }
    for (i, (label, color)) in groups.iter().enumerate() {
        let ly = MARGIN + 14.0 * i as f64;
        s.push_str(&format!(
            "<rect x=\"{lx}\" y=\"{ry:.1}\" width=\"10\" height=\"8\" fill=\"{color}\"/>\n\
             <text x=\"{tx}\" y=\"{ty:.1}\">{label}</text>\n",
            lx = w - MARGIN - 120.0,
            ry = ly,
            tx = w - MARGIN - 105.0,
            ty = ly + 8.0
        ));
    }
    s.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{floor}\" x2=\"{r}\" y2=\"{floor}\" stroke=\"#444\"/>\n",
        m = MARGIN - 10.0,
        r = w - MARGIN + 10.0
    ));
    s.push_str("</svg>\n");
    s
}

/// Top-down view: obstacle boxes, pelvis paths (green = success, red =
/// failure), start dots and goal rings.
fn svg_overlay(scene: &SceneMap, paths: &[(Vec<Vec2>, bool, Vec2, Vec2)]) -> String {
    let b = scene.bounds;
    let span_x = b.max.x - b.min.x;
    let span_y = b.max.y - b.min.y;
    let size = 560.0;
    let scale = (size - 2.0 * 20.0) / span_x.max(span_y);
    let w = span_x * scale + 40.0;
    let h = span_y * scale + 40.0;
    let px = |p: Vec2| (20.0 + (p.x - b.min.x) * scale, 20.0 + (b.max.y - p.y) * scale);
    let mut s = svg_open(w, h);
    s.push_str(&format!(
        "<rect x=\"20\" y=\"20\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#f8fafc\" stroke=\"#475569\"/>\n",
        span_x * scale,
        span_y * scale
    ));
    for ob in &scene.static_obstacles {
        let (x, y) = px(Vec2::new(ob.min.x, ob.max.y));
        s.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#94a3b8\" stroke=\"#334155\"/>\n",
            (ob.max.x - ob.min.x) * scale,
            (ob.max.y - ob.min.y) * scale
        ));
    }
    for mv in &scene.moving_obstacles {
        // Dashed outline at the script's start, plus the sweep of centers.
        let ob = mv.box_at(0.0);
        let (x, y) = px(Vec2::new(ob.min.x, ob.max.y));
        s.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#7c3aed\" stroke-dasharray=\"5 3\"/>\n",
            (ob.max.x - ob.min.x) * scale,
            (ob.max.y - ob.min.y) * scale
        ));
        let pts: String = mv
            .script
            .waypoints
            .iter()
            .map(|(_, c)| {
                let (cx, cy) = px(*c);
                format!("{cx:.1},{cy:.1}")
            })
            .collect::<Vec<_>>()
            .join(" ");
        s.push_str(&format!(
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"#7c3aed\" stroke-dasharray=\"2 3\"/>\n"
        ));
    }
    for (path, success, start, goal) in paths {
        let color = if *success { "#16a34a" } else { "#dc2626" };
        let pts: String = path
            .iter()
            .map(|p| {
                let (x, y) = px(*p);
                format!("{x:.1},{y:.1}")
            })
            .collect::<Vec<_>>()
            .join(" ");
        s.push_str(&format!(
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" opacity=\"0.75\"/>\n"
        ));
        let (sx0, sy0) = px(*start);
        let (gx, gy) = px(*goal);
        s.push_str(&format!(
            "<circle cx=\"{sx0:.1}\" cy=\"{sy0:.1}\" r=\"3\" fill=\"{color}\"/>\n\
             <circle cx=\"{gx:.1}\" cy=\"{gy:.1}\" r=\"5\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
        ));
    }
    s.push_str("</svg>\n");
    s
}
