//! Offline Q-learning harness: toy grasping environment, scripted dataset,
//! CEM action maximisation, Bellman training and policy evaluation.

pub mod cem;
pub mod dataset;
pub mod env;
pub mod eval;
pub mod policy;
pub mod run;
pub mod tabular;
pub mod train;

pub use cem::{cem_maximize, cem_maximize_batch, cem_maximize_states, CemConfig};
pub use dataset::{generate_dataset, DatasetConfig, GenerationStats, ReplayBuffer, Transition};
pub use env::{EnvConfig, GraspAction, GraspEnv, GraspState, GripperCommand, NETWORK_ACTION_DIM};
pub use eval::{evaluate_policy, evaluate_with, EvalResult};
pub use run::{run_training, MetricsRow, TrainingObserver};
pub use policy::{CemPolicy, ExpertPolicy, Policy, RandomPolicy};
pub use train::{bellman_loss, bellman_target, bellman_train_step, compute_targets, ArchSnapshot, Batch, StepRecord, Trainer, TrainerConfig};
