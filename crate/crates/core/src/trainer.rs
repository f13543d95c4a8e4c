//! On-policy training: rollout collection across environment instances,
//! generalized advantage estimation, the clipped-surrogate policy update
//! L = L^CLIP + c₁L^VF + c₂L^S with per-minibatch advantage normalization and
//! no value clipping, the KL-to-prior probe, reward+KL checkpoint selection,
//! and the two-stage (pretrain → finetune) schedule.

use std::sync::Arc;

use crate::body::Decoder;
use crate::env::{Env, EnvConfig, EnvState, Stage, Termination};
use crate::geom::{Pose2, Vec2};
use crate::nn::{Adam, Params};
use crate::policy::{entropy, log_prob, sample_action, Obs, Policy, PolicyConfig};
use crate::rng::stream;
use crate::scene::SceneMap;
use crate::sensing::SensingConfig;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PPOConfig {
    pub lr: f64,
    pub gamma: f64,
    pub clip: f64,
    pub repeat_per_collect: usize,
    pub c1: f64,
    pub c2: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub advantage_normalization: bool,
    pub value_clipping: bool,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            lr: 3e-4,
            gamma: 0.99,
            clip: 0.1,
            repeat_per_collect: 1,
            c1: 1.0,
            c2: 0.01,
            gae_lambda: 0.95,
            max_grad_norm: 0.1,
            batch_size: 256,
            steps_per_epoch: 20000,
            advantage_normalization: true,
            value_clipping: false,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.c1 >= 0.0 && self.c2 >= 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::Validation("PPO rates/weights must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0)
        {
            return Err(Error::Validation("gamma/lambda must lie in (0,1]".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Validation("clip ratio must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.repeat_per_collect == 0 {
            return Err(Error::Validation("batch/steps/repeat must be at least 1".into()));
        }
        if self.value_clipping {
            return Err(Error::Validation(
                "value clipping is not part of this training recipe".into(),
            ));
        }
        Ok(())
    }
}

/// Desk-scale run knobs that the published hyperparameter table leaves open.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub n_envs: usize,
    pub eval_episodes: usize,
    pub probe_states: usize,
    /// KL gate for checkpoint selection; `None` means 0.5 per action dim.
    pub kappa: Option<f64>,
    /// Pretrain convergence window: stop the stage early when the best eval
    /// reward improves by less than `min_improve` (relative) over this many
    /// consecutive epochs.
    pub patience: usize,
    pub min_improve: f64,
    pub eval_stochastic: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            n_envs: 8,
            eval_episodes: 16,
            probe_states: 512,
            kappa: None,
            patience: 10,
            min_improve: 0.01,
            eval_stochastic: true,
        }
    }
}

/// Supplies candidate start poses and goals for episode resets; the
/// environment's own walkability/separation checks arbitrate, and the
/// collector retries with the same stream until a candidate is accepted.
pub trait StartGoalSampler: Sync {
    fn sample(&self, rng: &mut ChaCha12Rng, scene: &SceneMap) -> (Pose2, Vec2);
}

/// Fixed list of start/goal pairs, cycled by draw order. Useful for tests and
/// single-scenario evaluation.
#[derive(Debug, Clone)]
pub struct FixedPairs(pub Vec<(Pose2, Vec2)>);

impl StartGoalSampler for FixedPairs {
    fn sample(&self, rng: &mut ChaCha12Rng, _scene: &SceneMap) -> (Pose2, Vec2) {
        use rand::RngCore;
        let i = (rng.next_u64() % self.0.len() as u64) as usize;
        self.0[i]
    }
}

/// One environment instance plus its persistent reset counter; the counter
/// keys the per-episode random streams so repeated collects never reuse one.
#[derive(Debug, Clone)]
pub struct EnvSlot {
    pub env: Env,
    pub env_id: u64,
    pub episode: u64,
}

pub fn make_slots(
    scenes: &[Arc<SceneMap>],
    decoder: &Arc<Decoder>,
    sensing: &SensingConfig,
    env_cfg: &EnvConfig,
    stage: Stage,
    n_envs: usize,
) -> Result<Vec<EnvSlot>> {
    if scenes.is_empty() {
        return Err(Error::Validation("at least one training scene is required".into()));
    }
    (0..n_envs)
        .map(|e| {
            Ok(EnvSlot {
                env: Env::new(
                    Arc::clone(&scenes[e % scenes.len()]),
                    Arc::clone(decoder),
                    sensing.clone(),
                    env_cfg.clone(),
                    stage,
                )?,
                env_id: e as u64,
                episode: 0,
            })
        })
        .collect()
}

/// Per-step on-policy records. Episodes are stored contiguously; each ends
/// with either a termination flag or a truncation marker, and `v_next` holds
/// the bootstrap value (0 at terminations, V(s_{t+1}) otherwise).
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub states: Vec<EnvState>,
    pub obs: Vec<Obs>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub v_next: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    pub terms: Vec<Termination>,
    pub episode_ids: Vec<u64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn append(&mut self, mut other: RolloutBuffer) {
        self.states.append(&mut other.states);
        self.obs.append(&mut other.obs);
        self.actions.append(&mut other.actions);
        self.log_probs.append(&mut other.log_probs);
        self.rewards.append(&mut other.rewards);
        self.values.append(&mut other.values);
        self.v_next.append(&mut other.v_next);
        self.dones.append(&mut other.dones);
        self.truncated.append(&mut other.truncated);
        self.terms.append(&mut other.terms);
        self.episode_ids.append(&mut other.episode_ids);
    }

    /// Episodes are contiguous and every episode ends in a termination flag
    /// or a truncation marker.
    pub fn check_episode_structure(&self) -> Result<()> {
        let n = self.len();
        let mut seen_closed: Vec<u64> = Vec::new();
        for t in 0..n {
            let id = self.episode_ids[t];
            if t > 0 && id != self.episode_ids[t - 1] {
                let prev = t - 1;
                if !(self.dones[prev] || self.truncated[prev]) {
                    return Err(Error::Runtime(format!(
                        "episode {} ends without termination or truncation",
                        self.episode_ids[prev]
                    )));
                }
                if seen_closed.contains(&id) {
                    return Err(Error::Runtime(format!("episode {id} is not contiguous")));
                }
                seen_closed.push(self.episode_ids[prev]);
            }
        }
        if n > 0 && !(self.dones[n - 1] || self.truncated[n - 1]) {
            return Err(Error::Runtime("final episode is unterminated and unmarked".into()));
        }
        Ok(())
    }
}

fn reset_slot(
    slot: &mut EnvSlot,
    sampler: &dyn StartGoalSampler,
    master_seed: u64,
) -> Result<EnvState> {
    slot.episode += 1;
    let mut rng = stream(master_seed, "episode-reset", slot.env_id, slot.episode);
    let mut last_err = None;
    for _ in 0..200 {
        let scene = Arc::clone(&slot.env.scene);
        let (start, goal) = sampler.sample(&mut rng, &scene);
        match slot.env.reset(start, goal) {
            Ok(s) => return Ok(s),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Runtime(format!(
        "env {}: no valid start/goal pair in 200 draws (last: {})",
        slot.env_id,
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn collect_one(
    slot: &mut EnvSlot,
    policy: &Policy,
    params: &Params,
    sampler: &dyn StartGoalSampler,
    master_seed: u64,
    quota: usize,
) -> Result<RolloutBuffer> {
    let mut buf = RolloutBuffer::default();
    if quota == 0 {
        return Ok(buf);
    }
    let mut state = reset_slot(slot, sampler, master_seed)?;
    let mut act_rng = stream(master_seed, "episode-action", slot.env_id, slot.episode);
    let mut episode_uid = (slot.env_id << 32) | slot.episode;
    while buf.len() < quota {
        let obs = policy.canonical_obs(&state)?;
        let tr = policy.forward(params, &obs);
        let sigma = policy.sigma(params);
        let (a, lp) = sample_action(&tr.mu, &sigma, &mut act_rng);
        let (next_state, reward, term) = slot
            .env
            .step(&a)
            .map_err(|e| Error::Runtime(format!("env {}: {e}", slot.env_id)))?;
        let done = term != Termination::Running;
        if slot.env.stage == Stage::Pretrain {
            assert!(
                term != Termination::Penetration,
                "pretraining must not terminate on penetration"
            );
        }
        buf.states.push(state);
        buf.obs.push(obs);
        buf.actions.push(a);
        buf.log_probs.push(lp);
        buf.rewards.push(reward.total);
        buf.values.push(tr.v);
        buf.dones.push(done);
        buf.truncated.push(false);
        buf.terms.push(term);
        buf.episode_ids.push(episode_uid);
        if done {
            buf.v_next.push(0.0);
            if buf.len() == quota {
                return Ok(buf);
            }
            state = reset_slot(slot, sampler, master_seed)?;
            act_rng = stream(master_seed, "episode-action", slot.env_id, slot.episode);
            episode_uid = (slot.env_id << 32) | slot.episode;
        } else if buf.len() == quota {
            // Quota cuts the episode: mark truncation and bootstrap with the
            // value of the state the episode would have continued from.
            let i = buf.len() - 1;
            buf.truncated[i] = true;
            buf.v_next.push(policy.forward_state(params, &next_state)?.v);
            return Ok(buf);
        } else {
            // Filled below once the next value estimate exists.
            buf.v_next.push(f64::NAN);
            let i = buf.len() - 1;
            let next_obs = policy.canonical_obs(&next_state)?;
            let v = policy.forward(params, &next_obs).v;
            buf.v_next[i] = v;
            state = next_state;
        }
    }
    Ok(buf)
}

/// Pool exactly `n_steps` transitions across the environment slots. Every
/// slot starts a fresh episode; episodes auto-reset on termination and the
/// final episode of each slot is truncated (with a bootstrap value) if the
/// quota cuts it short. Fixed seeds make the result bit-reproducible.
pub fn collect(
    slots: &mut [EnvSlot],
    policy: &Policy,
    params: &Params,
    sampler: &dyn StartGoalSampler,
    master_seed: u64,
    n_steps: usize,
) -> Result<RolloutBuffer> {
    let mut buf = RolloutBuffer::default();
    if n_steps == 0 {
        return Ok(buf);
    }
    if slots.is_empty() {
        return Err(Error::Validation("collect needs at least one environment".into()));
    }
    let n = slots.len();
    for (e, slot) in slots.iter_mut().enumerate() {
        let quota = n_steps / n + usize::from(e < n_steps % n);
        buf.append(collect_one(slot, policy, params, sampler, master_seed, quota)?);
    }
    debug_assert_eq!(buf.len(), n_steps);
    buf.check_episode_structure()?;
    Ok(buf)
}

/// Generalized advantage estimation over the buffer:
/// δ_t = r_t + γ·v_next_t − V_t and A_t = Σ_k (γλ)^k δ_{t+k} within each
/// episode; returns are A + V.
pub fn gae(buf: &RolloutBuffer, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = buf.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let continues = !buf.dones[t] && !buf.truncated[t];
        let delta = buf.rewards[t] + gamma * buf.v_next[t] - buf.values[t];
        acc = delta + gamma * lambda * if continues { acc } else { 0.0 };
        // An episode boundary above t (t is the last step of its episode)
        // resets the accumulator via the same flags on step t itself at the
        // next iteration, so nothing else is needed.
        adv[t] = acc;
    }
    let ret: Vec<f64> = adv.iter().zip(&buf.values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Per-sample clipped-surrogate term −min(ρA, clip(ρ, 1−ε, 1+ε)A) and
/// whether the gradient flows through the unclipped branch.
pub fn clip_surrogate(rho: f64, adv: f64, eps: f64) -> (f64, bool) {
    let s1 = rho * adv;
    let s2 = rho.clamp(1.0 - eps, 1.0 + eps) * adv;
    let m = s1.min(s2);
    // Non-finite inputs fall through to the caller's abort path.
    if m.is_finite() {
        assert!(
            m <= s1 + 1e-12 && m <= s2 + 1e-12,
            "surrogate exceeded its bounds: {m} vs ({s1}, {s2})"
        );
    }
    (-m, s1 <= s2)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    pub minibatches: usize,
    pub loss_clip: f64,
    pub loss_vf: f64,
    pub loss_s: f64,
    pub loss_total: f64,
    pub per_minibatch_clip: Vec<f64>,
    pub grad_norms_pre: Vec<f64>,
    pub grad_norms_post: Vec<f64>,
    pub aborted: bool,
    pub diagnostics: Option<String>,
}

/// One optimization pass (`repeat_per_collect` sweeps) over the collected
/// data in shuffled minibatches. Advantages are normalized per minibatch; the
/// value loss is unclipped; gradients are clipped by global norm; a non-finite
/// loss aborts the update and restores the pre-update parameters.
pub fn ppo_update(
    policy: &Policy,
    params: &mut Params,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    adv: &[f64],
    ret: &[f64],
    cfg: &PPOConfig,
    rng: &mut ChaCha12Rng,
) -> UpdateReport {
    let n = buf.len();
    let mut report = UpdateReport::default();
    if n == 0 {
        return report;
    }
    let snapshot = params.data.clone();
    let mut sums = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..cfg.repeat_per_collect {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.batch_size) {
            let b = chunk.len() as f64;
            // Normalize advantages within the minibatch (population std).
            let mut a_norm: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            if cfg.advantage_normalization && chunk.len() >= 2 {
                let mean = a_norm.iter().sum::<f64>() / b;
                let var = a_norm.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / b;
                let std = var.sqrt();
                for a in &mut a_norm {
                    *a = (*a - mean) / (std + 1e-8);
                }
            }

            params.zero_grad();
            let sigma = policy.sigma(params);
            let mut l_clip = 0.0;
            let mut l_vf = 0.0;
            let mut dlog_std = vec![0.0; policy.cfg.latent_dim];
            for (k, &i) in chunk.iter().enumerate() {
                let tr = policy.forward(params, &buf.obs[i]);
                let a = &buf.actions[i];
                let lp_new = log_prob(a, &tr.mu, &sigma);
                let rho = (lp_new - buf.log_probs[i]).exp();
                let (term, flow) = clip_surrogate(rho, a_norm[k], cfg.clip);
                l_clip += term / b;
                let dlp = if flow { -a_norm[k] * rho / b } else { 0.0 };
                let mut dmu = vec![0.0; policy.cfg.latent_dim];
                for j in 0..policy.cfg.latent_dim {
                    let z = (a[j] - tr.mu[j]) / sigma[j];
                    dmu[j] = dlp * z / sigma[j];
                    dlog_std[j] += dlp * (z * z - 1.0);
                }
                let verr = tr.v - ret[i];
                l_vf += verr * verr / b;
                let dv = cfg.c1 * 2.0 * verr / b;
                policy.backward(params, &tr, &dmu, dv);
            }
            let l_s = -entropy(&sigma);
            for d in &mut dlog_std {
                *d -= cfg.c2; // d(c₂·L^S)/d logσ = −c₂ per dimension
            }
            policy.accumulate_log_std_grad(params, &dlog_std);

            let total = l_clip + cfg.c1 * l_vf + cfg.c2 * l_s;
            if !total.is_finite() {
                params.data.copy_from_slice(&snapshot);
                report.aborted = true;
                report.diagnostics = Some(format!(
                    "non-finite loss at minibatch {}: clip {l_clip}, vf {l_vf}, s {l_s}",
                    report.minibatches
                ));
                return report;
            }
            let pre = params.clip_grad_norm(cfg.max_grad_norm);
            report.grad_norms_pre.push(pre);
            report.grad_norms_post.push(pre.min(cfg.max_grad_norm));
            opt.step(params);

            report.minibatches += 1;
            report.per_minibatch_clip.push(l_clip);
            sums.0 += l_clip;
            sums.1 += l_vf;
            sums.2 += l_s;
            sums.3 += total;
        }
    }
    let m = report.minibatches.max(1) as f64;
    report.loss_clip = sums.0 / m;
    report.loss_vf = sums.1 / m;
    report.loss_s = sums.2 / m;
    report.loss_total = sums.3 / m;
    report
}

/// KL(N(μ, diag σ²) ‖ N(0, I)) = Σᵢ [½(σᵢ² + μᵢ² − 1) − log σᵢ].
pub fn kl_gauss_to_std(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (s * s + m * m - 1.0) - s.ln())
        .sum()
}

/// Mean KL to the standard normal over a set of probe states.
pub fn kl_to_prior(policy: &Policy, params: &Params, probe: &[Obs]) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::Validation("KL probe needs at least one state".into()));
    }
    let sigma = policy.sigma(params);
    let sum: f64 = probe
        .iter()
        .map(|o| kl_gauss_to_std(&policy.forward(params, o).mu, &sigma))
        .sum();
    Ok((sum / probe.len() as f64).max(0.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub stage: Stage,
    pub eval_reward: f64,
    pub eval_reward_stochastic: Option<f64>,
    pub kl_to_prior: f64,
    pub params_json: String,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self).expect("checkpoint serializes"))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn restore_into(&self, params: &mut Params) -> Result<()> {
        params.load_json(&self.params_json)
    }
}

/// Among checkpoints whose KL gate passes (kl ≤ κ), the one with the best
/// eval reward; if none pass, the minimum-KL checkpoint with a warning flag.
pub fn select_checkpoint(checkpoints: &[Checkpoint], kappa: f64) -> Result<(&Checkpoint, bool)> {
    if checkpoints.is_empty() {
        return Err(Error::Validation("no checkpoints to select from".into()));
    }
    let best = checkpoints
        .iter()
        .filter(|c| c.kl_to_prior <= kappa)
        .max_by(|a, b| a.eval_reward.total_cmp(&b.eval_reward));
    match best {
        Some(c) => Ok((c, false)),
        None => {
            let c = checkpoints
                .iter()
                .min_by(|a, b| a.kl_to_prior.total_cmp(&b.kl_to_prior))
                .expect("non-empty");
            Ok((c, true))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageInit {
    Fresh,
    FromCheckpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: Stage,
    pub epochs: usize,
    pub init: StageInit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub mean_return: f64,
    pub mean_return_stochastic: Option<f64>,
    pub success_rate: f64,
    pub mean_final_dist: f64,
    pub kl_to_prior: f64,
    pub loss_clip: f64,
    pub loss_vf: f64,
    pub loss_s: f64,
    pub loss_total: f64,
    pub grad_norm_mean: f64,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<EpochLog>,
    pub early_stopped: bool,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mean_return: f64,
    pub mean_return_stochastic: Option<f64>,
    pub success_rate: f64,
    pub mean_final_dist: f64,
    pub mean_attention_cos: f64,
    pub max_pose_score: f64,
    pub episodes: usize,
    pub probe: Vec<Obs>,
}

/// Everything needed to run epochs against a fixed scene set.
pub struct Trainer {
    pub scenes: Vec<Arc<SceneMap>>,
    pub decoder: Arc<Decoder>,
    pub env_cfg: EnvConfig,
    pub sensing: SensingConfig,
    pub policy_cfg: PolicyConfig,
    pub ppo: PPOConfig,
    pub run: TrainRunConfig,
    pub master_seed: u64,
}

impl Trainer {
    pub fn kappa(&self) -> f64 {
        self.run
            .kappa
            .unwrap_or(0.5 * self.policy_cfg.latent_dim as f64)
    }

    /// Mean-action evaluation on held-out start/goal pairs, with an optional
    /// stochastic-return replica over the same pairs and a probe-state sample
    /// for the KL measurement. `salt` decorrelates eval streams per epoch.
    pub fn evaluate(
        &self,
        policy: &Policy,
        params: &Params,
        stage: Stage,
        sampler: &dyn StartGoalSampler,
        salt: u64,
    ) -> Result<EvalReport> {
        let episodes = self.run.eval_episodes.max(1);
        let mut pool: Vec<Obs> = Vec::new();
        let mut returns = 0.0;
        let mut st_returns = 0.0;
        let mut successes = 0usize;
        let mut final_d = 0.0;
        let mut att_sum = 0.0;
        let mut att_n = 0usize;
        let mut max_pose = f64::NEG_INFINITY;
        for ep in 0..episodes {
            let mut slot = EnvSlot {
                env: Env::new(
                    Arc::clone(&self.scenes[ep % self.scenes.len()]),
                    Arc::clone(&self.decoder),
                    self.sensing.clone(),
                    self.env_cfg.clone(),
                    stage,
                )?,
                env_id: u64::MAX - ep as u64,
                episode: salt.wrapping_mul(1_000_003),
            };
            let mut rng = stream(self.master_seed, "eval-reset", ep as u64, salt);
            let mut state = None;
            for _ in 0..200 {
                let scene = Arc::clone(&slot.env.scene);
                let (start, goal) = sampler.sample(&mut rng, &scene);
                if let Ok(s) = slot.env.reset(start, goal) {
                    state = Some(s);
                    break;
                }
            }
            let mut state =
                state.ok_or_else(|| Error::Runtime("no valid eval start/goal pair".into()))?;
            let start_state = state.clone();
            let mut ep_return = 0.0;
            loop {
                let obs = policy.canonical_obs(&state)?;
                pool.push(obs.clone());
                let tr = policy.forward(params, &obs);
                max_pose = max_pose.max(crate::body::pose_score(
                    &tr.mu,
                    self.decoder.cfg.pose_beta,
                ));
                let (next, reward, term) = slot.env.step(&tr.mu)?;
                ep_return += reward.total;
                // Viewing-direction alignment with the goal, measured as a raw
                // cosine regardless of the reward configuration.
                let last = slot.env.seed_frames().last().unwrap();
                let v = crate::body::derive_view(last, slot.env.gait().head_pitch)?;
                let eye = last.eye_mid_xy();
                let eye_z = (last.positions[crate::body::marker::EYE_L][2]
                    + last.positions[crate::body::marker::EYE_R][2])
                    / 2.0;
                att_sum += crate::env::r_attention(
                    v,
                    [eye.x, eye.y, eye_z],
                    slot.env.goal(),
                    true,
                );
                att_n += 1;
                state = next;
                if term != Termination::Running {
                    if slot.env.distance() < self.env_cfg.success_eval_thres {
                        successes += 1;
                    }
                    final_d += slot.env.distance();
                    break;
                }
            }
            returns += ep_return;

            if self.run.eval_stochastic {
                // Same start/goal, stochastic actions from a dedicated stream.
                slot.env.reset(
                    Pose2::new(
                        start_state.seed.last().unwrap().pelvis_xy().x,
                        start_state.seed.last().unwrap().pelvis_xy().y,
                        slot.env.gait().heading,
                    ),
                    slot.env.goal(),
                )?;
                let mut srng = stream(self.master_seed, "eval-action", ep as u64, salt);
                let mut s = slot.env.observe()?;
                let mut r_sum = 0.0;
                loop {
                    let obs = policy.canonical_obs(&s)?;
                    let tr = policy.forward(params, &obs);
                    let sigma = policy.sigma(params);
                    let (a, _) = sample_action(&tr.mu, &sigma, &mut srng);
                    let (next, reward, term) = slot.env.step(&a)?;
                    r_sum += reward.total;
                    s = next;
                    if term != Termination::Running {
                        break;
                    }
                }
                st_returns += r_sum;
            }
        }
        // Deterministic probe subsample from the visited-state pool.
        let mut probe = pool;
        if probe.len() > self.run.probe_states {
            let mut rng = stream(self.master_seed, "probe-pick", salt, 0);
            probe.shuffle(&mut rng);
            probe.truncate(self.run.probe_states);
        }
        Ok(EvalReport {
            mean_return: returns / episodes as f64,
            mean_return_stochastic: self
                .run
                .eval_stochastic
                .then_some(st_returns / episodes as f64),
            success_rate: successes as f64 / episodes as f64,
            mean_final_dist: final_d / episodes as f64,
            mean_attention_cos: att_sum / att_n.max(1) as f64,
            max_pose_score: max_pose,
            episodes,
            probe,
        })
    }

    /// Run one stage: per epoch collect → GAE → PPO update → evaluate →
    /// checkpoint. Pretraining stops early at the convergence criterion
    /// (best eval reward improving < `min_improve` over `patience` epochs).
    pub fn train(
        &self,
        plan: &StagePlan,
        init_from: Option<&Checkpoint>,
        sampler: &dyn StartGoalSampler,
    ) -> Result<TrainOutput> {
        self.ppo.validate()?;
        self.env_cfg.validate()?;
        if plan.init == StageInit::FromCheckpoint && init_from.is_none() {
            return Err(Error::Validation(
                "stage plan requires a checkpoint but none was provided".into(),
            ));
        }
        if plan.stage == Stage::Finetune && plan.init == StageInit::Fresh {
            return Err(Error::Validation(
                "finetuning must start from a pretraining checkpoint".into(),
            ));
        }

        let mut params = Params::new();
        let policy = Policy::new(&mut params, self.policy_cfg.clone())?;
        let mut start_epoch = 0usize;
        if let Some(ck) = init_from {
            ck.restore_into(&mut params)?;
            if ck.stage == plan.stage {
                start_epoch = ck.epoch + 1;
            }
        }

        let mut slots = make_slots(
            &self.scenes,
            &self.decoder,
            &self.sensing,
            &self.env_cfg,
            plan.stage,
            self.run.n_envs,
        )?;
        let mut opt = Adam::new(self.ppo.lr);
        let mut out = TrainOutput {
            checkpoints: Vec::new(),
            log: Vec::new(),
            early_stopped: false,
        };
        let mut best = f64::NEG_INFINITY;
        let mut since_improve = 0usize;
        let stage_tag = match plan.stage {
            Stage::Pretrain => 1u64,
            Stage::Finetune => 2u64,
        };

        for epoch in start_epoch..plan.epochs {
            let buf = collect(
                &mut slots,
                &policy,
                &params,
                sampler,
                self.master_seed,
                self.ppo.steps_per_epoch,
            )?;
            let (adv, ret) = gae(&buf, self.ppo.gamma, self.ppo.gae_lambda);
            let mut shuffle_rng = stream(self.master_seed, "ppo-shuffle", stage_tag, epoch as u64);
            let report = ppo_update(
                &policy,
                &mut params,
                &mut opt,
                &buf,
                &adv,
                &ret,
                &self.ppo,
                &mut shuffle_rng,
            );

            let eval = self.evaluate(&policy, &params, plan.stage, sampler, epoch as u64)?;
            let kl = kl_to_prior(&policy, &params, &eval.probe)?;
            out.checkpoints.push(Checkpoint {
                epoch,
                stage: plan.stage,
                eval_reward: eval.mean_return,
                eval_reward_stochastic: eval.mean_return_stochastic,
                kl_to_prior: kl,
                params_json: params.to_json(),
            });
            out.log.push(EpochLog {
                epoch,
                stage: plan.stage,
                mean_return: eval.mean_return,
                mean_return_stochastic: eval.mean_return_stochastic,
                success_rate: eval.success_rate,
                mean_final_dist: eval.mean_final_dist,
                kl_to_prior: kl,
                loss_clip: report.loss_clip,
                loss_vf: report.loss_vf,
                loss_s: report.loss_s,
                loss_total: report.loss_total,
                grad_norm_mean: report.grad_norms_pre.iter().sum::<f64>()
                    / report.grad_norms_pre.len().max(1) as f64,
                aborted: report.aborted,
            });

            // Pretraining convergence: relative improvement of the best eval
            // reward under min_improve for patience consecutive epochs.
            let improve_floor = self.run.min_improve * best.abs().max(1e-6);
            if eval.mean_return > best + improve_floor {
                best = eval.mean_return;
                since_improve = 0;
            } else {
                best = best.max(eval.mean_return);
                since_improve += 1;
            }
            if plan.stage == Stage::Pretrain && since_improve >= self.run.patience {
                out.early_stopped = true;
                break;
            }
        }
        Ok(out)
    }
}
