//! One-shot differentiable architecture search for vision-action Q-networks.
//!
//! A search network carries, at each of its action-merging sites, a softmax
//! mixture over five merge operators and a sigmoid-gated peer-attention
//! module. Both sets of selection logits are trained jointly with the network
//! weights by offline Q-learning, then hardened into a fixed architecture.
//!
//! Module map:
//! - [`tensor`]: dense fp64 tensors and the reverse-mode tape.
//! - [`fusion`]: action-merging supernet sites.
//! - [`attention`]: peer-attention connectivity.
//! - [`qnet`]: network assembly, architecture extraction, FLOP counting,
//!   checkpoints.
//! - [`rl`]: toy grasping environment, offline dataset, CEM, Bellman training
//!   and policy evaluation.
//! - [`config`]: run configuration shared by the CLI.
//! - [`diagnostics`]: the finite-difference gradient suite.

pub mod attention;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fusion;
pub mod params;
pub mod qnet;
pub mod rl;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
