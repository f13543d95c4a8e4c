//! The surrogate body: a 12-marker kinematic gait model whose latent-conditioned
//! decoder turns a 2-frame seed plus gait state into the next 18 frames of a
//! 20-frame, 40 Hz motion primitive.
//!
//! Latent channel map: a[0] speed delta, a[1] turn rate, a[2] head-yaw target,
//! a[3] head-pitch target, a[4..] smooth sway/jitter noise through a fixed
//! seeded projection. The pelvis follows a unicycle; feet alternate stance
//! (world-frozen anchor) and swing (smoothstep arc toward a world-fixed landing
//! target), which keeps one grounded, slow foot marker in every frame.

use crate::geom::{heading_dir, Pose2, RigidTransform2, Vec2};
use crate::rng::{fill_standard_normal, stream};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Marker count.
pub const M: usize = 12;
/// Frames per primitive and conditioning-seed length.
pub const T_FRAMES: usize = 20;
pub const T_SEED: usize = 2;
pub const DT: f64 = 0.025;

pub mod marker {
    pub const PELVIS: usize = 0;
    pub const HEAD_TOP: usize = 1;
    pub const EYE_L: usize = 2;
    pub const EYE_R: usize = 3;
    pub const SHOULDER_L: usize = 4;
    pub const SHOULDER_R: usize = 5;
    pub const HIP_L: usize = 6;
    pub const HIP_R: usize = 7;
    pub const HEEL_L: usize = 8;
    pub const HEEL_R: usize = 9;
    pub const TOE_L: usize = 10;
    pub const TOE_R: usize = 11;
}

/// The foot-marker set used by contact rewards and metrics.
pub const FOOT_MARKERS: [usize; 4] = [marker::HEEL_L, marker::HEEL_R, marker::TOE_L, marker::TOE_R];

pub const MARKER_NAMES: [&str; M] = [
    "pelvis",
    "head_top",
    "eye_l",
    "eye_r",
    "shoulder_l",
    "shoulder_r",
    "hip_l",
    "hip_r",
    "heel_l",
    "heel_r",
    "toe_l",
    "toe_r",
];

/// One 40 Hz sample: marker positions (m, z up) and finite-difference
/// velocities (m/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    pub positions: [[f64; 3]; M],
    pub velocities: [[f64; 3]; M],
}

impl MarkerFrame {
    pub fn pelvis_xy(&self) -> Vec2 {
        Vec2::new(self.positions[marker::PELVIS][0], self.positions[marker::PELVIS][1])
    }

    pub fn eye_mid_xy(&self) -> Vec2 {
        let l = self.positions[marker::EYE_L];
        let r = self.positions[marker::EYE_R];
        Vec2::new((l[0] + r[0]) * 0.5, (l[1] + r[1]) * 0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().chain(self.velocities.iter()).all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn transformed(&self, g: &RigidTransform2) -> MarkerFrame {
        let mut out = self.clone();
        for i in 0..M {
            out.positions[i] = g.apply_pt3(self.positions[i]);
            out.velocities[i] = g.apply_dir3(self.velocities[i]);
        }
        out
    }
}

/// A 20-frame clip: the first `T_SEED` frames repeat the conditioning seed, the
/// rest are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    pub frames: Vec<MarkerFrame>,
}

impl MotionPrimitive {
    pub fn new(seed: &[MarkerFrame], generated: Vec<MarkerFrame>) -> MotionPrimitive {
        assert_eq!(seed.len(), T_SEED);
        assert_eq!(seed.len() + generated.len(), T_FRAMES);
        let mut frames = seed.to_vec();
        frames.extend(generated);
        MotionPrimitive { frames }
    }

    pub fn seed(&self) -> &[MarkerFrame] {
        &self.frames[..T_SEED]
    }

    pub fn generated(&self) -> &[MarkerFrame] {
        &self.frames[T_SEED..]
    }

    /// The last `T_SEED` frames — the next step's conditioning seed.
    pub fn tail_seed(&self) -> Vec<MarkerFrame> {
        self.frames[T_FRAMES - T_SEED..].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StanceFoot {
    Left,
    Right,
}

impl StanceFoot {
    pub fn other(self) -> StanceFoot {
        match self {
            StanceFoot::Left => StanceFoot::Right,
            StanceFoot::Right => StanceFoot::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootAnchor {
    pub pos: Vec2,
    pub yaw: f64,
}

/// Internal decoder state carried between primitives. The foot anchors pin
/// each foot's world pose through its stance half-cycle so that chained
/// primitives stay continuous; turn rate is carried so it can slew instead of
/// jumping when the latent changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitState {
    pub phase: f64,
    pub stance: StanceFoot,
    pub heading: f64,
    pub speed: f64,
    pub turn_rate: f64,
    /// Heading committed for the current swing at lift-off; the landing
    /// target tracks this frozen direction so a mid-swing turn cannot jerk
    /// the airborne foot sideways.
    pub swing_ref: f64,
    pub head_yaw: f64,
    pub head_pitch: f64,
    pub left_anchor: FootAnchor,
    pub right_anchor: FootAnchor,
}

impl GaitState {
    pub fn transformed(&self, g: &RigidTransform2) -> GaitState {
        let mut out = self.clone();
        out.heading = self.heading + g.angle();
        out.swing_ref = self.swing_ref + g.angle();
        out.left_anchor = FootAnchor {
            pos: g.apply_pt(self.left_anchor.pos),
            yaw: self.left_anchor.yaw + g.angle(),
        };
        out.right_anchor = FootAnchor {
            pos: g.apply_pt(self.right_anchor.pos),
            yaw: self.right_anchor.yaw + g.angle(),
        };
        out
    }
}

/// Body proportions (meters) for a fixed 1.7 m figure.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyDims {
    pub pelvis_height: f64,
    pub head_top_rise: f64,
    pub eye_rise: f64,
    pub eye_forward: f64,
    pub eye_lateral: f64,
    pub shoulder_rise: f64,
    pub shoulder_lateral: f64,
    pub hip_drop: f64,
    pub hip_lateral: f64,
    pub foot_lateral: f64,
    pub heel_back: f64,
    pub toe_forward: f64,
    pub foot_ground: f64,
    pub torso_radius: f64,
    pub leg_radius: f64,
}

impl Default for BodyDims {
    fn default() -> Self {
        BodyDims {
            pelvis_height: 0.95,
            head_top_rise: 0.75,
            eye_rise: 0.65,
            eye_forward: 0.08,
            eye_lateral: 0.035,
            shoulder_rise: 0.45,
            shoulder_lateral: 0.20,
            hip_drop: 0.05,
            hip_lateral: 0.10,
            foot_lateral: 0.10,
            heel_back: 0.07,
            toe_forward: 0.18,
            foot_ground: 0.015,
            torso_radius: 0.15,
            leg_radius: 0.12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    pub stride: f64,
    pub max_speed: f64,
    pub max_turn_rate: f64,
    pub max_head_yaw: f64,
    pub max_head_pitch: f64,
    pub speed_gain: f64,
    pub head_blend: f64,
    pub sway_amp: f64,
    pub jitter_amp: f64,
    pub bob_amp: f64,
    pub swing_height: f64,
    pub noise_seed: u64,
    pub pose_beta: f64,
    pub body_sample_points: usize,
    pub dims: BodyDims,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            latent_dim: 16,
            stride: 0.65,
            max_speed: 1.8,
            max_turn_rate: 1.5,
            max_head_yaw: 1.0,
            max_head_pitch: 0.5,
            speed_gain: 0.5,
            head_blend: 0.25,
            sway_amp: 0.01,
            jitter_amp: 0.004,
            bob_amp: 0.015,
            swing_height: 0.05,
            noise_seed: 0x6a11,
            pose_beta: 1.75,
            body_sample_points: 200,
            dims: BodyDims::default(),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 4 || self.latent_dim > 128 {
            return Err(Error::Validation(format!(
                "latent_dim must be in [4, 128], got {}",
                self.latent_dim
            )));
        }
        if !(self.stride > 0.0 && self.max_speed > 0.0 && self.max_turn_rate > 0.0) {
            return Err(Error::Validation("decoder rates must be positive".into()));
        }
        // A frame's phase advance must be smaller than the post-touchdown
        // span of the half-cycle so each swing gets a touchdown frame before
        // the stance switch.
        if self.max_speed * DT / self.stride > 1.0 - SWING_LAND {
            return Err(Error::Validation(format!(
                "stride {} too short for max_speed {} at this frame rate",
                self.stride, self.max_speed
            )));
        }
        Ok(())
    }
}

// Noise features fed by a[4..]: index 0 drives lateral sway, 1..4 a shared
// rigid head offset, 4..7 and 7..10 the two shoulder offsets.
const NOISE_FEATURES: usize = 10;
const NOISE_HEAD: usize = 1;
const NOISE_SHOULDER_L: usize = 4;
const NOISE_SHOULDER_R: usize = 7;

// The swing foot leaves the ground only after SWING_LIFT of its half-cycle
// and touches down at SWING_LAND, so each stance switch happens inside a
// double-support window with one foot guaranteed frozen on the ground.
const SWING_LIFT: f64 = 0.1;
const SWING_LAND: f64 = 0.9;
// Per-frame caps on how fast the turn rate (rad/s) and head yaw (rad) may
// change. They bound marker accelerations so a latent change at a primitive
// boundary cannot jerk the shoulder and eye markers past the continuity
// budget of the seam between primitives.
const TURN_SLEW: f64 = 0.7;
const HEAD_YAW_SLEW: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    noise_proj: Vec<f64>, // NOISE_FEATURES × (latent_dim − 4), row-major
}

impl Decoder {
    pub fn new(cfg: DecoderConfig) -> Result<Decoder> {
        cfg.validate()?;
        let tail = cfg.latent_dim - 4;
        let mut noise_proj = vec![0.0; NOISE_FEATURES * tail];
        let mut rng = stream(cfg.noise_seed, "decoder-noise-projection", 0, 0);
        fill_standard_normal(&mut rng, &mut noise_proj);
        Ok(Decoder { cfg, noise_proj })
    }

    /// Squash the free latent channels into per-feature values in (−1, 1).
    fn noise_features(&self, a: &[f64]) -> [f64; NOISE_FEATURES] {
        let tail = self.cfg.latent_dim - 4;
        let scale = 1.0 / (tail.max(1) as f64).sqrt();
        let mut out = [0.0; NOISE_FEATURES];
        for (f, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..tail {
                acc += self.noise_proj[f * tail + j] * a[4 + j];
            }
            *o = (acc * scale).tanh();
        }
        out
    }

    /// Generate the 18 post-seed frames and the carried-over gait state.
    pub fn decode_primitive(
        &self,
        seed: &[MarkerFrame],
        gait: &GaitState,
        a: &[f64],
    ) -> Result<(Vec<MarkerFrame>, GaitState)> {
        if a.len() != self.cfg.latent_dim {
            return Err(Error::Validation(format!(
                "latent has {} dims, decoder expects {}",
                a.len(),
                self.cfg.latent_dim
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite latent action".into()));
        }
        if seed.len() != T_SEED {
            return Err(Error::Validation(format!("seed must hold {T_SEED} frames")));
        }

        let cfg = &self.cfg;
        let n_gen = T_FRAMES - T_SEED;
        let speed_target = (gait.speed + a[0] * cfg.speed_gain).clamp(0.0, cfg.max_speed);
        let turn_target = a[1].clamp(-cfg.max_turn_rate, cfg.max_turn_rate);
        let head_yaw_target = a[2].clamp(-cfg.max_head_yaw, cfg.max_head_yaw);
        let head_pitch_target = a[3].clamp(-cfg.max_head_pitch, cfg.max_head_pitch);
        let noise = self.noise_features(a);

        let mut g = gait.clone();
        let mut pelvis = seed[T_SEED - 1].pelvis_xy();
        let mut prev = seed[T_SEED - 1].clone();
        let mut frames = Vec::with_capacity(n_gen);
        for f in 0..n_gen {
            // Linear ramps: equal speed increments reach the target on the
            // last frame; the turn rate slews toward its target.
            g.speed += (speed_target - g.speed) / (n_gen - f) as f64;
            g.turn_rate += (turn_target - g.turn_rate).clamp(-TURN_SLEW, TURN_SLEW);
            g.heading += g.turn_rate * DT;
            pelvis += heading_dir(g.heading) * (g.speed * DT);
            // Phase rate: one full cycle (two steps) per 2·stride of travel.
            let dphase = g.speed * DT / (2.0 * cfg.stride);
            let old_phase = g.phase;
            g.phase = (g.phase + dphase) % 1.0;
            let wrapped = (old_phase < 0.5) != (g.phase < 0.5) || g.phase < old_phase;
            let prev_u = (old_phase % 0.5) / 0.5;
            let u = (g.phase % 0.5) / 0.5;
            let swing = g.stance.other();
            // Lift-off: the swing commits to the current heading.
            if !wrapped && prev_u < SWING_LIFT && u >= SWING_LIFT {
                g.swing_ref = g.heading;
            }
            // Touchdown: once the swing foot reaches its landing progress it
            // freezes at the landing point for the rest of the half-cycle.
            // The wrapped arm is a guard for configs fast enough to jump the
            // landing window in a single frame.
            if (!wrapped && prev_u < SWING_LAND && u >= SWING_LAND)
                || (wrapped && prev_u < SWING_LAND)
            {
                let fwd = heading_dir(g.swing_ref);
                let anchor = FootAnchor {
                    pos: pelvis + fwd * (0.5 * cfg.stride) + fwd.perp() * self.foot_side(swing),
                    yaw: g.swing_ref,
                };
                match swing {
                    StanceFoot::Left => g.left_anchor = anchor,
                    StanceFoot::Right => g.right_anchor = anchor,
                }
            }
            if wrapped {
                g.stance = swing;
                g.swing_ref = g.heading;
            }
            g.head_yaw += ((head_yaw_target - g.head_yaw) * cfg.head_blend)
                .clamp(-HEAD_YAW_SLEW, HEAD_YAW_SLEW);
            g.head_pitch += (head_pitch_target - g.head_pitch) * cfg.head_blend;

            // Noise window: ~0 at both clip ends so chained primitives stay C1
            // even when the latent (and hence the offsets) changes.
            let w = {
                let u = (f + 1) as f64 / (n_gen + 1) as f64;
                (std::f64::consts::PI * u).sin().powi(2)
            };
            let positions = self.build_positions(&g, pelvis, &noise, w);
            let mut velocities = [[0.0; 3]; M];
            for i in 0..M {
                for k in 0..3 {
                    velocities[i][k] = (positions[i][k] - prev.positions[i][k]) / DT;
                }
            }
            let frame = MarkerFrame { positions, velocities };
            prev = frame.clone();
            frames.push(frame);
        }
        Ok((frames, g))
    }

    fn foot_side(&self, foot: StanceFoot) -> f64 {
        match foot {
            StanceFoot::Left => self.cfg.dims.foot_lateral,
            StanceFoot::Right => -self.cfg.dims.foot_lateral,
        }
    }

    fn build_positions(
        &self,
        g: &GaitState,
        pelvis: Vec2,
        noise: &[f64; NOISE_FEATURES],
        w: f64,
    ) -> [[f64; 3]; M] {
        let d = &self.cfg.dims;
        let fwd = heading_dir(g.heading);
        let left = fwd.perp();
        let sway = left * (self.cfg.sway_amp * noise[0] * (std::f64::consts::TAU * g.phase).sin() * w);
        let bob = self.cfg.bob_amp
            * (g.speed / self.cfg.max_speed)
            * (std::f64::consts::TAU * g.phase).cos().powi(2);
        let pelvis_z = d.pelvis_height - bob;
        let torso = pelvis + sway;
        let head_dir = heading_dir(g.heading + g.head_yaw);
        let head_left = head_dir.perp();
        // Jitter offsets live in the body (or head) frame so the whole build
        // is equivariant under rigid motions of the scene.
        let jit = |base: usize, fx: Vec2, fy: Vec2| -> (Vec2, f64) {
            let a = self.cfg.jitter_amp * noise[base] * w;
            let b = self.cfg.jitter_amp * noise[base + 1] * w;
            let c = self.cfg.jitter_amp * noise[base + 2] * w;
            (fx * a + fy * b, c)
        };
        let (hj, hjz) = jit(NOISE_HEAD, head_dir, head_left);
        let (sl, slz) = jit(NOISE_SHOULDER_L, fwd, left);
        let (sr, srz) = jit(NOISE_SHOULDER_R, fwd, left);

        let mut p = [[0.0; 3]; M];
        p[marker::PELVIS] = [torso.x, torso.y, pelvis_z];
        p[marker::HEAD_TOP] = [
            torso.x + hj.x,
            torso.y + hj.y,
            pelvis_z + d.head_top_rise + hjz,
        ];
        let eye_c = torso + head_dir * d.eye_forward;
        let el = eye_c + head_left * d.eye_lateral + hj;
        let er = eye_c - head_left * d.eye_lateral + hj;
        p[marker::EYE_L] = [el.x, el.y, pelvis_z + d.eye_rise + hjz];
        p[marker::EYE_R] = [er.x, er.y, pelvis_z + d.eye_rise + hjz];
        let shl = torso + left * d.shoulder_lateral + sl;
        let shr = torso - left * d.shoulder_lateral + sr;
        p[marker::SHOULDER_L] = [shl.x, shl.y, pelvis_z + d.shoulder_rise + slz];
        p[marker::SHOULDER_R] = [shr.x, shr.y, pelvis_z + d.shoulder_rise + srz];
        let hl = torso + left * d.hip_lateral;
        let hr = torso - left * d.hip_lateral;
        p[marker::HIP_L] = [hl.x, hl.y, pelvis_z - d.hip_drop];
        p[marker::HIP_R] = [hr.x, hr.y, pelvis_z - d.hip_drop];

        let (lp, lz, lyaw) = self.foot_pose(g, pelvis, StanceFoot::Left);
        let (rp, rz, ryaw) = self.foot_pose(g, pelvis, StanceFoot::Right);
        let lf = heading_dir(lyaw);
        let rf = heading_dir(ryaw);
        let heel_l = lp - lf * d.heel_back;
        let toe_l = lp + lf * d.toe_forward;
        let heel_r = rp - rf * d.heel_back;
        let toe_r = rp + rf * d.toe_forward;
        p[marker::HEEL_L] = [heel_l.x, heel_l.y, lz];
        p[marker::HEEL_R] = [heel_r.x, heel_r.y, rz];
        p[marker::TOE_L] = [toe_l.x, toe_l.y, lz];
        p[marker::TOE_R] = [toe_r.x, toe_r.y, rz];
        p
    }

    /// World ankle position, sole height, and yaw of one foot at the current
    /// gait state. The stance foot sits frozen at its anchor; the swing foot
    /// blends from its lift-off anchor toward a world-fixed landing target.
    fn foot_pose(&self, g: &GaitState, pelvis: Vec2, foot: StanceFoot) -> (Vec2, f64, f64) {
        let d = &self.cfg.dims;
        let anchor = match foot {
            StanceFoot::Left => g.left_anchor,
            StanceFoot::Right => g.right_anchor,
        };
        if foot == g.stance {
            return (anchor.pos, d.foot_ground, anchor.yaw);
        }
        let u = (g.phase % 0.5) / 0.5;
        // Swing occupies only the middle of the half-cycle; before lift-off
        // and after touchdown the foot sits frozen at its anchor, giving a
        // double-support window around every stance switch.
        let sw = ((u - SWING_LIFT) / (SWING_LAND - SWING_LIFT)).clamp(0.0, 1.0);
        if sw >= 1.0 {
            // Landed: the anchor was refreshed at touchdown.
            return (anchor.pos, d.foot_ground, anchor.yaw);
        }
        let s = sw * sw * (3.0 - 2.0 * sw);
        let fwd = heading_dir(g.swing_ref);
        let lat = self.foot_side(foot);
        // Landing target ahead of the current pelvis by the travel remaining
        // until touchdown plus the half-stride landing offset, along the
        // lift-off heading. The pelvis advances `stride` per half-cycle, so
        // this point is world-fixed under steady gait and the foot
        // decelerates into it.
        let target = pelvis
            + fwd * ((SWING_LAND - u).max(0.0) * self.cfg.stride + 0.5 * self.cfg.stride)
            + fwd.perp() * lat;
        let pos = anchor.pos + (target - anchor.pos) * s;
        let yaw = anchor.yaw + (g.swing_ref - anchor.yaw) * s;
        let z = d.foot_ground + self.cfg.swing_height * (std::f64::consts::PI * sw).sin();
        (pos, z, yaw)
    }

    /// A motionless frame in the given pose, used for episode starts.
    pub fn standing_frame(&self, pose: Pose2) -> MarkerFrame {
        let g = self.standing_gait(pose);
        let positions = self.build_positions(&g, pose.pos, &[0.0; NOISE_FEATURES], 0.0);
        MarkerFrame {
            positions,
            velocities: [[0.0; 3]; M],
        }
    }

    pub fn standing_gait(&self, pose: Pose2) -> GaitState {
        let fwd = heading_dir(pose.heading);
        let left = fwd.perp();
        GaitState {
            phase: 0.0,
            stance: StanceFoot::Left,
            heading: pose.heading,
            speed: 0.0,
            turn_rate: 0.0,
            swing_ref: pose.heading,
            head_yaw: 0.0,
            head_pitch: 0.0,
            left_anchor: FootAnchor {
                pos: pose.pos + left * self.cfg.dims.foot_lateral,
                yaw: pose.heading,
            },
            right_anchor: FootAnchor {
                pos: pose.pos - left * self.cfg.dims.foot_lateral,
                yaw: pose.heading,
            },
        }
    }

    /// Two identical standing frames: a zero-velocity conditioning seed.
    pub fn standing_seed(&self, pose: Pose2) -> (Vec<MarkerFrame>, GaitState) {
        let f = self.standing_frame(pose);
        (vec![f.clone(), f], self.standing_gait(pose))
    }

    /// Deterministic surface samples over the torso and leg capsules of one
    /// frame, for penetration scoring. `out` is cleared and refilled.
    pub fn body_sample_points(&self, frame: &MarkerFrame, out: &mut Vec<[f64; 3]>) {
        out.clear();
        let n = self.cfg.body_sample_points;
        let n_torso = n / 2;
        let n_legs = n - n_torso;
        let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        let pelvis = frame.positions[marker::PELVIS];
        let head = frame.positions[marker::HEAD_TOP];
        for k in 0..n_torso {
            let s = (k as f64 + 0.5) / n_torso as f64;
            let phi = k as f64 * golden;
            let (sp, cp) = phi.sin_cos();
            out.push([
                pelvis[0] + (head[0] - pelvis[0]) * s + self.cfg.dims.torso_radius * cp,
                pelvis[1] + (head[1] - pelvis[1]) * s + self.cfg.dims.torso_radius * sp,
                pelvis[2] + (head[2] - pelvis[2]) * s,
            ]);
        }
        let hl = frame.positions[marker::HIP_L];
        let hr = frame.positions[marker::HIP_R];
        let mid_hip = [(hl[0] + hr[0]) * 0.5, (hl[1] + hr[1]) * 0.5, (hl[2] + hr[2]) * 0.5];
        for k in 0..n_legs {
            let s = (k as f64 + 0.5) / n_legs as f64;
            let phi = (k + n_torso) as f64 * golden;
            let (sp, cp) = phi.sin_cos();
            // Axis runs from mid-hip straight down to the floor.
            out.push([
                mid_hip[0] + self.cfg.dims.leg_radius * cp,
                mid_hip[1] + self.cfg.dims.leg_radius * sp,
                mid_hip[2] * (1.0 - s),
            ]);
        }
    }
}

/// Horizontal unit vector the torso faces: perpendicular to the hip axis,
/// sign-disambiguated by the shoulder axis.
pub fn derive_forward(frame: &MarkerFrame) -> Result<Vec2> {
    let hl = frame.positions[marker::HIP_L];
    let hr = frame.positions[marker::HIP_R];
    let hip = Vec2::new(hr[0] - hl[0], hr[1] - hl[1]);
    let f = hip
        .perp()
        .normalized()
        .ok_or_else(|| Error::Runtime("coincident hip markers".into()))?;
    let sl = frame.positions[marker::SHOULDER_L];
    let sr = frame.positions[marker::SHOULDER_R];
    let sh = Vec2::new(sr[0] - sl[0], sr[1] - sl[1]).perp();
    if f.dot(sh) < 0.0 {
        Ok(-f)
    } else {
        Ok(f)
    }
}

/// Viewing direction: horizontal perpendicular of the inter-eye segment,
/// forward-facing, tilted by `head_pitch` (positive looks up).
pub fn derive_view(frame: &MarkerFrame, head_pitch: f64) -> Result<[f64; 3]> {
    let l = frame.positions[marker::EYE_L];
    let r = frame.positions[marker::EYE_R];
    let e = Vec2::new(r[0] - l[0], r[1] - l[1]);
    let mut dir = e
        .perp()
        .normalized()
        .ok_or_else(|| Error::Runtime("coincident eye markers".into()))?;
    if let Ok(fwd) = derive_forward(frame) {
        if dir.dot(fwd) < 0.0 {
            dir = -dir;
        }
    }
    let (sp, cp) = head_pitch.sin_cos();
    Ok([dir.x * cp, dir.y * cp, sp])
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Scalar flagging implausible configurations: a scaled latent norm plus a
/// shifted-softplus saturation penalty on the four control channels (zero when
/// the latent is zero).
pub fn pose_score(a: &[f64], beta: f64) -> f64 {
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sat: f64 = a
        .iter()
        .take(4)
        .map(|v| softplus(v.abs() - 3.0) - softplus(-3.0))
        .sum();
    beta * norm + sat
}

/// Agent-centric frame: last seed pelvis at the origin, body forward along +x.
/// Returns the canonical seed, transformed extras, and the world→canonical
/// transform.
pub fn canonicalize(
    seed: &[MarkerFrame],
    extras: &[Vec2],
) -> Result<(Vec<MarkerFrame>, Vec<Vec2>, RigidTransform2)> {
    let last = seed
        .last()
        .ok_or_else(|| Error::Runtime("empty seed".into()))?;
    let fwd = derive_forward(last)?;
    let pelvis = last.pelvis_xy();
    let rot = RigidTransform2::from_angle_translation(-fwd.angle(), Vec2::ZERO);
    let g = rot.compose(&RigidTransform2::from_angle_translation(0.0, -pelvis));
    let canon_seed = seed.iter().map(|f| f.transformed(&g)).collect();
    let canon_extras = extras.iter().map(|&p| g.apply_pt(p)).collect();
    Ok((canon_seed, canon_extras, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn decoder() -> Decoder {
        Decoder::new(DecoderConfig::default()).unwrap()
    }

    fn chain(
        dec: &Decoder,
        start: Pose2,
        actions: &[Vec<f64>],
    ) -> (Vec<MotionPrimitive>, Vec<MarkerFrame>, GaitState) {
        let (mut seed, mut gait) = dec.standing_seed(start);
        let mut prims = Vec::new();
        for a in actions {
            let (frames, next) = dec.decode_primitive(&seed, &gait, a).unwrap();
            let prim = MotionPrimitive::new(&seed, frames);
            seed = prim.tail_seed();
            gait = next;
            prims.push(prim);
        }
        (prims, seed, gait)
    }

    fn zeros() -> Vec<f64> {
        vec![0.0; 16]
    }

    fn with(ch: usize, v: f64) -> Vec<f64> {
        let mut a = zeros();
        a[ch] = v;
        a
    }

    #[test]
    fn standing_fixed_point() {
        let dec = decoder();
        let (prims, _, _) = chain(&dec, Pose2::new(1.0, 2.0, 0.7), &[zeros()]);
        let first = &prims[0].frames[0];
        let last = prims[0].frames.last().unwrap();
        assert!(first.pelvis_xy().dist(last.pelvis_xy()) < 0.01);
        for f in &prims[0].frames {
            for &m in &FOOT_MARKERS {
                let v = f.velocities[m];
                let sp = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                assert!(sp < 0.075, "foot speed {sp}");
            }
        }
    }

    #[test]
    fn cruise_advances_half_meter() {
        let dec = decoder();
        // Accelerate to 1.0 m/s, let the ramp settle, then measure one cruise
        // primitive. The clip occupies 0.5 s (each of its 20 frames covers one
        // 1/40 s interval), so ground covered = last-frame position plus its
        // velocity carried through its interval, minus the first frame.
        let warmup = vec![with(0, 2.0), zeros(), zeros()];
        let (_, seed, gait) = chain(&dec, Pose2::new(0.0, 0.0, 0.0), &warmup);
        assert_abs_diff_eq!(gait.speed, 1.0, epsilon = 1e-12);
        let (frames, _) = dec.decode_primitive(&seed, &gait, &zeros()).unwrap();
        let prim = MotionPrimitive::new(&seed, frames);
        let p0 = prim.frames[0].pelvis_xy();
        let last = prim.frames.last().unwrap();
        let pl = last.pelvis_xy()
            + Vec2::new(last.velocities[marker::PELVIS][0], last.velocities[marker::PELVIS][1]) * DT;
        let adv = (pl - p0).dot(heading_dir(0.0));
        assert!((adv - 0.5).abs() <= 0.02, "advance {adv}");
    }

    #[test]
    fn four_max_turn_primitives() {
        let dec = decoder();
        // Independent check: integrate the slewed unicycle heading directly.
        // The turn rate climbs to its 1.5 rad/s cap within three frames and
        // holds it, so four chained max-turn primitives yield just under the
        // 2.7 rad a step-change turn rate would give.
        let mut w: f64 = 0.0;
        let mut oracle: f64 = 0.0;
        for _ in 0..4 * (T_FRAMES - T_SEED) {
            w += (1.5 - w).clamp(-0.7, 0.7);
            oracle += w * DT;
        }
        assert_abs_diff_eq!(oracle, 2.6775, epsilon = 1e-12);

        let cruise = vec![with(0, 2.0), zeros()];
        let (_, seed, gait) = chain(&dec, Pose2::new(0.0, 0.0, 0.0), &cruise);
        let h0 = gait.heading;
        let mut s = seed;
        let mut g = gait;
        for _ in 0..4 {
            let (frames, next) = dec.decode_primitive(&s, &g, &with(1, 9.0)).unwrap();
            let prim = MotionPrimitive::new(&s, frames);
            s = prim.tail_seed();
            let per_prim = (next.heading - g.heading).abs();
            assert!(per_prim <= 0.75 + 1e-12, "turn per primitive {per_prim}");
            g = next;
        }
        assert_abs_diff_eq!(g.heading - h0, oracle, epsilon = 1e-9);
    }

    #[test]
    fn continuity_at_seed_boundary() {
        let dec = decoder();
        let mut rng = crate::rng::stream(3, "continuity", 0, 0);
        let (mut seed, mut gait) = dec.standing_seed(Pose2::new(0.0, 0.0, 0.3));
        for _ in 0..30 {
            let mut a = zeros();
            crate::rng::fill_standard_normal(&mut rng, &mut a);
            for v in a.iter_mut() {
                *v *= 2.0;
            }
            let (frames, next) = dec.decode_primitive(&seed, &gait, &a).unwrap();
            let last = seed.last().unwrap();
            for m in 0..M {
                let mut dev = 0.0;
                for k in 0..3 {
                    let extrap = last.positions[m][k] + last.velocities[m][k] * DT;
                    dev += (frames[0].positions[m][k] - extrap).powi(2);
                }
                // Torso and head markers hold the 0.01 m seam budget at any
                // speed. A swinging foot covers twice the stride per step, so
                // its deceleration profile needs a speed-dependent allowance
                // (second differences scale with (speed·Δt)²/stride) plus a
                // term for heel/toe pivot as the foot yaw tracks a turn.
                let allowed = if FOOT_MARKERS.contains(&m) {
                    (0.004 + 45.0 * gait.speed * gait.speed * DT * DT).max(0.01)
                } else {
                    0.01
                };
                assert!(
                    dev.sqrt() <= allowed,
                    "marker {m} jump {} beyond extrapolation (allowed {allowed})",
                    dev.sqrt()
                );
            }
            let prim = MotionPrimitive::new(&seed, frames);
            seed = prim.tail_seed();
            gait = next;
        }
    }

    #[test]
    fn foot_contact_structure() {
        let dec = decoder();
        let mut rng = crate::rng::stream(5, "contact", 0, 0);
        let (mut seed, mut gait) = dec.standing_seed(Pose2::new(0.0, 0.0, 0.0));
        for step in 0..25 {
            let mut a = zeros();
            crate::rng::fill_standard_normal(&mut rng, &mut a);
            a[0] = a[0].abs() + 0.5; // keep moving
            let (frames, next) = dec.decode_primitive(&seed, &gait, &a).unwrap();
            if next.speed > 0.1 {
                for (fi, f) in frames.iter().enumerate() {
                    let ok = FOOT_MARKERS.iter().any(|&m| {
                        let v = f.velocities[m];
                        let sp = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        f.positions[m][2] <= 0.02 && sp <= 0.075
                    });
                    assert!(ok, "step {step} frame {fi}: no grounded slow foot");
                }
            }
            let prim = MotionPrimitive::new(&seed, frames);
            seed = prim.tail_seed();
            gait = next;
        }
    }

    #[test]
    fn speed_and_turn_clamps() {
        let dec = decoder();
        let (seed, gait) = dec.standing_seed(Pose2::new(0.0, 0.0, 0.0));
        let mut a = zeros();
        a[0] = 1e6;
        a[1] = -1e6;
        let (frames, next) = dec.decode_primitive(&seed, &gait, &a).unwrap();
        assert!(next.speed <= 1.8 + 1e-12);
        assert!((next.heading - gait.heading).abs() <= 0.75 + 1e-12);
        for f in &frames {
            let v = f.velocities[marker::PELVIS];
            let sp = (v[0] * v[0] + v[1] * v[1]).sqrt();
            // Allow the sway/bob components a little headroom.
            assert!(sp <= 1.8 + 0.1, "pelvis speed {sp}");
        }
    }

    #[test]
    fn non_finite_latent_rejected() {
        let dec = decoder();
        let (seed, gait) = dec.standing_seed(Pose2::new(0.0, 0.0, 0.0));
        let mut a = zeros();
        a[7] = f64::NAN;
        assert!(dec.decode_primitive(&seed, &gait, &a).is_err());
    }

    #[test]
    fn decode_is_deterministic() {
        let dec = decoder();
        let (seed, gait) = dec.standing_seed(Pose2::new(0.3, -1.0, 2.0));
        let mut a = zeros();
        for (i, v) in a.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let (f1, g1) = dec.decode_primitive(&seed, &gait, &a).unwrap();
        let (f2, g2) = dec.decode_primitive(&seed, &gait, &a).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn decoder_equivariance() {
        let dec = decoder();
        let mut rng = crate::rng::stream(9, "equivariance", 0, 0);
        for _ in 0..20 {
            let angle = rng.gen_range(-3.0..3.0);
            let shift = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let g = RigidTransform2::from_angle_translation(angle, shift);
            let pose = Pose2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0));
            let mut a = zeros();
            crate::rng::fill_standard_normal(&mut rng, &mut a);

            let (seed, gait) = dec.standing_seed(pose);
            let (frames, _) = dec.decode_primitive(&seed, &gait, &a).unwrap();

            let seed_g: Vec<_> = seed.iter().map(|f| f.transformed(&g)).collect();
            let gait_g = gait.transformed(&g);
            let (frames_g, _) = dec.decode_primitive(&seed_g, &gait_g, &a).unwrap();

            for (f, fg) in frames.iter().zip(&frames_g) {
                let f_mapped = f.transformed(&g);
                for m in 0..M {
                    for k in 0..3 {
                        assert!(
                            (f_mapped.positions[m][k] - fg.positions[m][k]).abs() < 1e-9,
                            "marker {m} axis {k}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn view_direction_canonical() {
        let dec = decoder();
        let f = dec.standing_frame(Pose2::new(0.0, 0.0, 0.0));
        let v = derive_view(&f, 0.0).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn view_direction_pitched() {
        let dec = decoder();
        let f = dec.standing_frame(Pose2::new(0.0, 0.0, 0.0));
        let v = derive_view(&f, -0.5).unwrap();
        assert_abs_diff_eq!(v[0], 0.5f64.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], -(0.5f64.sin()), epsilon = 1e-12);
    }

    #[test]
    fn coincident_eyes_error() {
        let dec = decoder();
        let mut f = dec.standing_frame(Pose2::new(0.0, 0.0, 0.0));
        f.positions[marker::EYE_R] = f.positions[marker::EYE_L];
        assert!(derive_view(&f, 0.0).is_err());
    }

    #[test]
    fn forward_canonical_and_rotated() {
        let dec = decoder();
        let f = dec.standing_frame(Pose2::new(0.0, 0.0, 0.0));
        let o = derive_forward(&f).unwrap();
        assert_abs_diff_eq!(o.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.y, 0.0, epsilon = 1e-12);

        let quarter = std::f64::consts::FRAC_PI_2;
        let fr = f.transformed(&RigidTransform2::from_angle_translation(quarter, Vec2::ZERO));
        let or = derive_forward(&fr).unwrap();
        assert_abs_diff_eq!(or.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(or.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coincident_hips_error() {
        let dec = decoder();
        let mut f = dec.standing_frame(Pose2::new(0.0, 0.0, 0.0));
        f.positions[marker::HIP_R] = f.positions[marker::HIP_L];
        assert!(derive_forward(&f).is_err());
    }

    #[test]
    fn pose_score_zero_at_origin() {
        assert_abs_diff_eq!(pose_score(&zeros(), 1.75), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn pose_score_calibration() {
        // Monte-Carlo check of the stored β: standard-normal latents land
        // below the reward threshold at least 99% of the time, and extreme
        // latents exceed the abnormality flag.
        let mut rng = crate::rng::stream(13, "pose-calibration", 0, 0);
        let n = 10_000;
        let mut below = 0;
        for _ in 0..n {
            let mut a = zeros();
            crate::rng::fill_standard_normal(&mut rng, &mut a);
            if pose_score(&a, 1.75) < 11.0 {
                below += 1;
            }
        }
        assert!(below as f64 / n as f64 >= 0.99, "only {below}/{n} below 11");

        let mut big = zeros();
        big[5] = 100.0;
        assert!(pose_score(&big, 1.75) > 15.0);
    }

    #[test]
    fn canonicalize_identity_and_translation() {
        let dec = decoder();
        let (seed, _) = dec.standing_seed(Pose2::new(0.0, 0.0, 0.0));
        let (cs, _, g) = canonicalize(&seed, &[]).unwrap();
        assert_abs_diff_eq!(g.angle(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.trans.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cs[1].pelvis_xy().x, 0.0, epsilon = 1e-12);

        let (seed_t, _) = dec.standing_seed(Pose2::new(3.0, 4.0, 0.0));
        let (_, _, gt) = canonicalize(&seed_t, &[]).unwrap();
        assert_abs_diff_eq!(gt.trans.x, -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gt.trans.y, -4.0, epsilon = 1e-12);
    }

    #[test]
    fn canonicalize_rigid_invariance() {
        let dec = decoder();
        let mut rng = crate::rng::stream(17, "canon", 0, 0);
        for _ in 0..25 {
            let pose = Pose2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let goal = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let (seed, _) = dec.standing_seed(pose);
            let (cs, ce, _) = canonicalize(&seed, &[goal]).unwrap();

            let g = RigidTransform2::from_angle_translation(
                rng.gen_range(-3.0..3.0),
                Vec2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)),
            );
            let seed_g: Vec<_> = seed.iter().map(|f| f.transformed(&g)).collect();
            let (cs2, ce2, _) = canonicalize(&seed_g, &[g.apply_pt(goal)]).unwrap();
            for (a, b) in cs.iter().zip(&cs2) {
                for m in 0..M {
                    for k in 0..3 {
                        assert!((a.positions[m][k] - b.positions[m][k]).abs() < 1e-9);
                    }
                }
            }
            assert!((ce[0].x - ce2[0].x).abs() < 1e-9);
            assert!((ce[0].y - ce2[0].y).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_points_count_and_locality() {
        let dec = decoder();
        let f = dec.standing_frame(Pose2::new(2.0, 3.0, 0.5));
        let mut pts = Vec::new();
        dec.body_sample_points(&f, &mut pts);
        assert_eq!(pts.len(), 200);
        for p in &pts {
            let d = Vec2::new(p[0] - 2.0, p[1] - 3.0).norm();
            assert!(d <= 0.16, "sample {d} m from pelvis axis");
            assert!(p[2] >= -1e-12 && p[2] <= 1.71);
        }
    }
}
