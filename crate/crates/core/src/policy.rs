//! Recurrent actor–critic: gated recurrent encoders for the motion seed and
//! the depth fan, positional encoding for the scalar channels, a shared tanh
//! trunk, a Gaussian actor head with a state-independent log-σ vector, and a
//! scalar critic head. Forward passes cache activations so the backward pass
//! is exact.

use crate::body::{canonicalize, M};
use crate::env::EnvState;
use crate::nn::{GruCell, GruTrace, Init, Linear, ParamId, Params};
use crate::rng::{fill_standard_normal, stream};
use crate::{Error, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Flattened marker inputs per seed frame: positions, velocities, and
/// per-marker goal directions.
pub const SEED_INPUT_DIM: usize = M * 3 * 3;
/// Scalar channels fed to the positional encoding: goal distance, a clamped
/// rescaled copy, and the normalized remaining-step budget.
pub const N_SCALARS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub latent_dim: usize,
    pub n_rays: usize,
    pub seed_hidden: usize,
    pub sensing_hidden: usize,
    pub scalar_dim: usize,
    pub trunk_width: usize,
    pub pe_bands: usize,
    pub max_steps: usize,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            latent_dim: 16,
            n_rays: 32,
            seed_hidden: 128,
            sensing_hidden: 64,
            scalar_dim: 32,
            trunk_width: 256,
            pe_bands: 4,
            max_steps: 24,
            init_seed: 0x90a1,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("n_rays", self.n_rays),
            ("seed_hidden", self.seed_hidden),
            ("sensing_hidden", self.sensing_hidden),
            ("scalar_dim", self.scalar_dim),
            ("trunk_width", self.trunk_width),
            ("pe_bands", self.pe_bands),
            ("max_steps", self.max_steps),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("policy {name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn trunk_input(&self) -> usize {
        self.seed_hidden + self.sensing_hidden + self.scalar_dim
    }

    pub fn pe_dim(&self) -> usize {
        N_SCALARS * 2 * self.pe_bands
    }
}

/// Append `[sin(2⁰πx), cos(2⁰πx), …, sin(2^{L−1}πx), cos(2^{L−1}πx)]`.
pub fn positional_encoding(x: f64, bands: usize, out: &mut Vec<f64>) {
    let mut freq = std::f64::consts::PI;
    for _ in 0..bands {
        out.push((freq * x).sin());
        out.push((freq * x).cos());
        freq *= 2.0;
    }
}

/// Policy-ready observation: the state expressed in the agent-centric frame
/// (last seed pelvis at the origin, body forward along +x) with scalar
/// channels extracted. Sensing is already egocentric and passes through.
#[derive(Debug, Clone, PartialEq)]
pub struct Obs {
    pub seed_inputs: Vec<Vec<f64>>,
    pub sensing: Vec<Vec<f64>>,
    pub scalars: [f64; N_SCALARS],
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    seed_trace: GruTrace,
    sense_trace: GruTrace,
    pe: Vec<f64>,
    concat: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
    pub mu: Vec<f64>,
    pub v: f64,
}

impl Trace {
    /// The shared trunk output the heads read.
    pub fn features(&self) -> &[f64] {
        &self.t2
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub cfg: PolicyConfig,
    seed_gru: GruCell,
    sense_gru: GruCell,
    scalar_affine: Linear,
    trunk1: Linear,
    trunk2: Linear,
    actor: Linear,
    critic: Linear,
    pub log_std: ParamId,
}

impl Policy {
    /// Allocate and initialize all parameters in `p`. Hidden layers get
    /// orthogonal weights; the actor head is scaled by 0.01 with zero bias so
    /// initial actions stay close to the standard normal; log-σ starts at 0.
    pub fn new(p: &mut Params, cfg: PolicyConfig) -> Result<Policy> {
        cfg.validate()?;
        let mut rng = stream(cfg.init_seed, "policy-init", 0, 0);
        let ortho = Init::Orthogonal { gain: 1.0 };
        let seed_gru = GruCell::new(p, &mut rng, "seed_gru", SEED_INPUT_DIM, cfg.seed_hidden, ortho);
        let sense_gru = GruCell::new(p, &mut rng, "sense_gru", cfg.n_rays, cfg.sensing_hidden, ortho);
        let scalar_affine = Linear::new(p, &mut rng, "scalar", cfg.pe_dim(), cfg.scalar_dim, ortho);
        let trunk1 = Linear::new(p, &mut rng, "trunk1", cfg.trunk_input(), cfg.trunk_width, ortho);
        let trunk2 = Linear::new(p, &mut rng, "trunk2", cfg.trunk_width, cfg.trunk_width, ortho);
        let actor = Linear::new(
            p,
            &mut rng,
            "actor",
            cfg.trunk_width,
            cfg.latent_dim,
            Init::Orthogonal { gain: 0.01 },
        );
        let critic = Linear::new(p, &mut rng, "critic", cfg.trunk_width, 1, ortho);
        let log_std = p.alloc("log_std", cfg.latent_dim, 1);
        Ok(Policy {
            cfg,
            seed_gru,
            sense_gru,
            scalar_affine,
            trunk1,
            trunk2,
            actor,
            critic,
            log_std,
        })
    }

    /// Express a world-frame state in the agent-centric frame and flatten it
    /// into encoder inputs.
    pub fn canonical_obs(&self, s: &EnvState) -> Result<Obs> {
        if s.seed.is_empty() || s.marker_dirs.len() != s.seed.len() || s.sensing.len() != s.seed.len()
        {
            return Err(Error::Validation(format!(
                "state has {} seed frames, {} direction rows, {} sensing rows",
                s.seed.len(),
                s.marker_dirs.len(),
                s.sensing.len()
            )));
        }
        for row in &s.sensing {
            if row.len() != self.cfg.n_rays {
                return Err(Error::Validation(format!(
                    "sensing row has {} depths, policy expects {}",
                    row.len(),
                    self.cfg.n_rays
                )));
            }
        }
        let (canon_seed, _, g) = canonicalize(&s.seed, &[])?;
        let mut seed_inputs = Vec::with_capacity(canon_seed.len());
        for (frame, dirs) in canon_seed.iter().zip(&s.marker_dirs) {
            let mut x = Vec::with_capacity(SEED_INPUT_DIM);
            for m in 0..M {
                x.extend_from_slice(&frame.positions[m]);
            }
            for m in 0..M {
                x.extend_from_slice(&frame.velocities[m]);
            }
            for d in dirs.iter() {
                x.extend_from_slice(&g.apply_dir3(*d));
            }
            seed_inputs.push(x);
        }
        Ok(Obs {
            seed_inputs,
            sensing: s.sensing.clone(),
            scalars: [
                s.d,
                (s.d / 10.0).clamp(0.0, 1.0),
                s.tau as f64 / self.cfg.max_steps as f64,
            ],
        })
    }

    pub fn forward(&self, p: &Params, obs: &Obs) -> Trace {
        let seed_trace =
            self.seed_gru
                .forward_seq(p, &vec![0.0; self.cfg.seed_hidden], &obs.seed_inputs);
        let sense_trace =
            self.sense_gru
                .forward_seq(p, &vec![0.0; self.cfg.sensing_hidden], &obs.sensing);
        let mut pe = Vec::with_capacity(self.cfg.pe_dim());
        for &x in &obs.scalars {
            positional_encoding(x, self.cfg.pe_bands, &mut pe);
        }
        let scal = self.scalar_affine.forward(p, &pe);

        let mut concat = Vec::with_capacity(self.cfg.trunk_input());
        concat.extend_from_slice(seed_trace.last());
        concat.extend_from_slice(sense_trace.last());
        concat.extend_from_slice(&scal);

        let t1: Vec<f64> = self.trunk1.forward(p, &concat).iter().map(|v| v.tanh()).collect();
        let t2: Vec<f64> = self.trunk2.forward(p, &t1).iter().map(|v| v.tanh()).collect();
        let mu = self.actor.forward(p, &t2);
        let v = self.critic.forward(p, &t2)[0];
        Trace {
            seed_trace,
            sense_trace,
            pe,
            concat,
            t1,
            t2,
            mu,
            v,
        }
    }

    pub fn forward_state(&self, p: &Params, s: &EnvState) -> Result<Trace> {
        Ok(self.forward(p, &self.canonical_obs(s)?))
    }

    /// σ = exp(log-σ), elementwise.
    pub fn sigma(&self, p: &Params) -> Vec<f64> {
        p.get(self.log_std).iter().map(|v| v.exp()).collect()
    }

    /// Exact reverse pass for upstream gradients on μ and V; accumulates into
    /// `p.grad` through the heads, trunk, scalar path, and both recurrent
    /// encoders unrolled over the seed frames.
    pub fn backward(&self, p: &mut Params, tr: &Trace, dmu: &[f64], dv: f64) {
        let w = self.cfg.trunk_width;
        let mut dfeat = vec![0.0; w];
        self.actor.backward(p, &tr.t2, dmu, Some(&mut dfeat));
        self.critic.backward(p, &tr.t2, &[dv], Some(&mut dfeat));

        let d2: Vec<f64> = dfeat
            .iter()
            .zip(&tr.t2)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut dt1 = vec![0.0; w];
        self.trunk2.backward(p, &tr.t1, &d2, Some(&mut dt1));
        let d1: Vec<f64> = dt1
            .iter()
            .zip(&tr.t1)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut dconcat = vec![0.0; self.cfg.trunk_input()];
        self.trunk1.backward(p, &tr.concat, &d1, Some(&mut dconcat));

        let (a, b) = (self.cfg.seed_hidden, self.cfg.seed_hidden + self.cfg.sensing_hidden);
        self.seed_gru.backward_seq(p, &tr.seed_trace, &dconcat[..a]);
        self.sense_gru.backward_seq(p, &tr.sense_trace, &dconcat[a..b]);
        self.scalar_affine.backward(p, &tr.pe, &dconcat[b..], None);
    }

    /// Accumulate a direct gradient on the state-independent log-σ vector.
    pub fn accumulate_log_std_grad(&self, p: &mut Params, d: &[f64]) {
        debug_assert_eq!(d.len(), self.cfg.latent_dim);
        for (i, g) in d.iter().enumerate() {
            p.grad[self.log_std.offset + i] += g;
        }
    }
}

/// Draw a = μ + σ⊙ε with ε standard normal from the stream, unclipped, and
/// return it with its log-density.
pub fn sample_action(mu: &[f64], sigma: &[f64], rng: &mut impl RngCore) -> (Vec<f64>, f64) {
    let mut eps = vec![0.0; mu.len()];
    fill_standard_normal(rng, &mut eps);
    let a: Vec<f64> = mu
        .iter()
        .zip(sigma)
        .zip(&eps)
        .map(|((m, s), e)| m + s * e)
        .collect();
    let lp = log_prob(&a, mu, sigma);
    (a, lp)
}

/// log N(a; μ, diag σ²) = Σᵢ [−(aᵢ−μᵢ)²/(2σᵢ²) − log σᵢ − ½log 2π].
pub fn log_prob(a: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    a.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((a, m), s)| {
            let z = (a - m) / s;
            -0.5 * z * z - s.ln() - half_ln_2pi
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian: Σᵢ ½log(2πe σᵢ²).
pub fn entropy(sigma: &[f64]) -> f64 {
    let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    sigma.iter().map(|s| c + s.ln()).sum()
}
