//! Cross-entropy-method action maximisation.
//!
//! Each state keeps a diagonal Gaussian over the raw 7-d action features.
//! Every iteration samples a population, projects each sample onto the valid
//! action set before scoring, and refits mean and variance on the elite
//! fraction. The final mean is projected and returned. States are processed
//! as one batch so a Q-network scores `states × population` rows per call.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::env::{GraspAction, GraspState, ACTION_FEATURES, NETWORK_ACTION_DIM, STATE_SCALARS};
use crate::qnet::{EncodedStates, QNetwork};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub iterations: usize,
    pub elite_fraction: f64,
    pub init_std: f64,
    /// Added to every refitted variance.
    pub regularization: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 64,
            iterations: 3,
            elite_fraction: 0.1,
            init_std: 0.6,
            regularization: 1e-6,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.iterations == 0 {
            return Err(Error::Config("cem population and iterations must be positive".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::Config("cem elite_fraction must lie in (0, 1]".into()));
        }
        if !(self.init_std > 0.0) || !(self.regularization >= 0.0) {
            return Err(Error::Config("cem init_std must be positive, regularization non-negative".into()));
        }
        Ok(())
    }

    pub fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).round() as usize).clamp(1, self.population)
    }
}

/// Runs CEM for `states` independent problems. `score` receives
/// `states × population` projected actions, state-major, and returns one
/// value per action.
pub fn cem_maximize_batch<R, F>(states: usize, cfg: &CemConfig, rng: &mut R, mut score: F) -> Result<Vec<GraspAction>>
where
    R: Rng + ?Sized,
    F: FnMut(&[GraspAction]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let (pop, d, k) = (cfg.population, ACTION_FEATURES, cfg.elites());
    let mut mean = vec![0.0; states * d];
    let mut std = vec![cfg.init_std; states * d];
    let mut raw = vec![0.0; states * pop * d];
    let mut actions = Vec::with_capacity(states * pop);
    let mut order: Vec<usize> = Vec::with_capacity(pop);
    for _ in 0..cfg.iterations {
        actions.clear();
        for s in 0..states {
            for p in 0..pop {
                let row = &mut raw[(s * pop + p) * d..(s * pop + p + 1) * d];
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    row[j] = mean[s * d + j] + std[s * d + j] * z;
                }
                actions.push(GraspAction::project(row));
            }
        }
        let scores = score(&actions)?;
        if scores.len() != actions.len() {
            return Err(Error::Invalid(format!(
                "CEM scorer returned {} values for {} actions",
                scores.len(),
                actions.len()
            )));
        }
        for s in 0..states {
            let sc = &scores[s * pop..(s + 1) * pop];
            order.clear();
            order.extend(0..pop);
            // Stable sort: equal scores keep sampling order. NaN sorts last.
            order.sort_by(|&a, &b| sc[b].partial_cmp(&sc[a]).unwrap_or_else(|| sc[a].is_nan().cmp(&sc[b].is_nan())));
            for j in 0..d {
                let vals = order[..k].iter().map(|&p| raw[(s * pop + p) * d + j]);
                let m = vals.clone().sum::<f64>() / k as f64;
                let var = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / k as f64;
                mean[s * d + j] = m;
                std[s * d + j] = (var + cfg.regularization).sqrt();
            }
        }
    }
    Ok(mean.chunks(d).map(GraspAction::project).collect())
}

/// Network action rows pairing `actions` (state-major, `per_state` each)
/// with the scalars of their states.
pub fn action_rows(actions: &[GraspAction], scalars: &[[f64; STATE_SCALARS]], per_state: usize) -> Tensor {
    let mut data = Vec::with_capacity(actions.len() * NETWORK_ACTION_DIM);
    for (i, a) in actions.iter().enumerate() {
        data.extend_from_slice(&a.features());
        data.extend_from_slice(&scalars[i / per_state]);
    }
    Tensor::new(&[actions.len(), NETWORK_ACTION_DIM], data).expect("row width")
}

/// CEM for a batch of pre-encoded states under `net`.
pub fn cem_maximize_states<R: Rng + ?Sized>(
    net: &QNetwork,
    enc: &EncodedStates,
    scalars: &[[f64; STATE_SCALARS]],
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<Vec<GraspAction>> {
    let repeated = enc.repeat_rows(cfg.population);
    cem_maximize_batch(enc.batch(), cfg, rng, |actions| {
        net.head_values(&repeated, &action_rows(actions, scalars, cfg.population))
    })
}

/// Greedy action for a single state.
pub fn cem_maximize<R: Rng + ?Sized>(net: &QNetwork, state: &GraspState, cfg: &CemConfig, rng: &mut R) -> Result<GraspAction> {
    let s = state.image.shape().to_vec();
    let image = state.image.as_ref().clone().reshape(&[1, s[0], s[1], s[2]])?;
    let enc = net.encode_states(&image)?;
    Ok(cem_maximize_states(net, &enc, &[state.scalars()], cfg, rng)?[0])
}
