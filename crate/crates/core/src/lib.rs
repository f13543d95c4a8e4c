//! Desk-scale simulator and trainer for sensing-driven human navigation.
//!
//! A 2D scene with static and scripted moving box obstacles is navigated by a
//! 12-marker kinematic body whose 0.5 s motion primitives are produced by a
//! latent-conditioned gait decoder. A recurrent actor–critic policy picks the
//! latent each step, trained with clipped-surrogate policy optimization, and
//! trained policies compose into multi-agent crowds.

pub mod body;
pub mod config;
pub mod crowd;
pub mod env;
pub mod geom;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod scenarios;
pub mod scene;
pub mod sensing;
pub mod traj;
pub mod trainer;

/// Crate-wide error type. `Validation` maps to CLI exit code 1, the rest to 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) => 1,
            Error::Runtime(_) | Error::Io(_) => 2,
        }
    }
}
