//! Part-level timed motion annotation, conditional motion generation, and
//! evaluation.
//!
//! The crate is organized around one data contract: a motion sequence of `T`
//! frames paired with a three-level timed annotation (sequence, actions,
//! per-part tracks). Modules build on that contract in layers:
//!
//! - [`annotation`]: the annotation schema, validation, and dataset statistics
//! - [`text`]: text embedding (pluggable encoder) and PCA projection
//! - [`motion`]: skeletons, forward kinematics, 6D rotations, and the
//!   per-frame pose feature codec
//! - [`synth`]: procedural generation of annotated motion datasets
//! - [`conditioning`]: per-frame conditioning grids and train-time masking
//! - [`nn`] / [`diffusion`]: a hand-written transformer denoiser and the
//!   DDPM schedule, trainer, and sampler built on it
//! - [`retrieval`] / [`metrics`]: contrastive retrieval models and the
//!   evaluation suite (R@k, M2T, FID, diversity)
//! - [`agent`]: LLM-backed annotation with validation, retries, and
//!   agreement statistics
//!
//! Everything downstream of a seed is deterministic: the same inputs and the
//! same seed produce byte-identical artifacts, with or without the `parallel`
//! feature.

pub mod agent;
pub mod annotation;
pub mod conditioning;
pub mod config;
pub mod diffusion;
pub mod exec;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod render;
pub mod retrieval;
pub mod seeds;
pub mod synth;
pub mod text;
