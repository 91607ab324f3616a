use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cem::CemConfig;
use super::dataset::rollout;
use super::env::EnvConfig;
use super::policy::{CemPolicy, Policy};
use crate::qnet::QNetwork;
use crate::rng::{stream, Subsystem};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Half-width of the 95% normal-approximation binomial interval.
    pub ci95: f64,
}

impl EvalResult {
    pub fn from_counts(successes: usize, episodes: usize) -> Self {
        let n = episodes.max(1) as f64;
        let p = successes as f64 / n;
        Self {
            episodes,
            successes,
            success_rate: p,
            ci95: 1.96 * (p * (1.0 - p) / n).sqrt(),
        }
    }
}

/// Rolls out `episodes` fresh environments, each with its own seeded env
/// and policy streams, and counts successes.
pub fn evaluate_with<P, F>(make_policy: F, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    env_cfg.validate()?;
    let outcomes: Vec<bool> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut env_rng = stream(seed, Subsystem::Eval, 2 * i);
            let mut policy_rng = stream(seed, Subsystem::Eval, 2 * i + 1);
            let (_, outcome) = rollout(env_cfg, &mut make_policy(), &mut env_rng, &mut policy_rng)?;
            Ok(outcome.success)
        })
        .collect::<Result<_>>()?;
    Ok(EvalResult::from_counts(outcomes.iter().filter(|&&s| s).count(), episodes))
}

/// Greedy CEM policy under `net`.
pub fn evaluate_policy(net: &QNetwork, env_cfg: &EnvConfig, cem: &CemConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    evaluate_with(
        || CemPolicy {
            net,
            cem: cem.clone(),
        },
        env_cfg,
        episodes,
        seed,
    )
}
