//! Offline Bellman training of θ and φ in one loop.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cem::{action_rows, cem_maximize_states, CemConfig};
use super::dataset::ReplayBuffer;
use super::env::{GraspState, NETWORK_ACTION_DIM, STATE_SCALARS};
use crate::fusion::{entropy, harden_logits, MergeOpKind};
use crate::params::SgdMomentum;
use crate::qnet::{NetworkKind, QNetwork, EDGE_THRESHOLD};
use crate::rng::{stream, Subsystem};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub gamma: f64,
    /// Steps between target-network refreshes.
    pub target_update: usize,
    /// Steps between evaluations (0 disables periodic evaluation).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Steps between checkpoints (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 32,
            learning_rate: 0.0044,
            momentum: 0.958,
            l2: 9e-5,
            gamma: 0.9,
            target_update: 200,
            eval_every: 1000,
            eval_episodes: 200,
            checkpoint_every: 5000,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.target_update == 0 {
            return Err(Error::Config("trainer batch_size and target_update must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("trainer.gamma must lie in [0, 1]".into()));
        }
        let finite = [self.learning_rate, self.momentum, self.l2];
        if finite.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("trainer learning_rate, momentum and l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// `r + γ·max_a' Q(s', a')` for live transitions, `r` for terminal ones.
pub fn bellman_target(reward: f64, done: bool, gamma: f64, max_next: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * max_next
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_states: Vec<GraspState>,
}

fn stack_images(states: &[&GraspState]) -> Result<Tensor> {
    let images: Vec<&Tensor> = states.iter().map(|s| s.image.as_ref()).collect();
    Ok(Tensor::stack(&images)?)
}

impl Batch {
    pub fn gather(buffer: &ReplayBuffer, indices: &[usize]) -> Result<Self> {
        let ts: Vec<_> = indices.iter().map(|&i| buffer.get(i)).collect();
        let states: Vec<&GraspState> = ts.iter().map(|t| &t.s).collect();
        let mut actions = Vec::with_capacity(ts.len() * NETWORK_ACTION_DIM);
        for t in &ts {
            actions.extend_from_slice(&t.s.network_action(&t.a));
        }
        Ok(Self {
            indices: indices.to_vec(),
            images: stack_images(&states)?,
            actions: Tensor::new(&[ts.len(), NETWORK_ACTION_DIM], actions)?,
            rewards: ts.iter().map(|t| t.r).collect(),
            dones: ts.iter().map(|t| t.done).collect(),
            next_states: ts.iter().map(|t| t.s_next.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Bellman targets with the max over next actions approximated by CEM on
/// `target`: the Q value at the CEM solution.
pub fn compute_targets(
    target: &QNetwork,
    batch: &Batch,
    gamma: f64,
    cem: &CemConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch.dones[i] && gamma > 0.0).collect();
    let mut max_next = vec![0.0; batch.len()];
    if !live.is_empty() {
        let states: Vec<&GraspState> = live.iter().map(|&i| &batch.next_states[i]).collect();
        let enc = target.encode_states(&stack_images(&states)?)?;
        let scalars: Vec<[f64; STATE_SCALARS]> = states.iter().map(|s| s.scalars()).collect();
        let best = cem_maximize_states(target, &enc, &scalars, cem, rng)?;
        let q = target.head_values(&enc, &action_rows(&best, &scalars, 1))?;
        for (&i, v) in live.iter().zip(q) {
            max_next[i] = v;
        }
    }
    Ok((0..batch.len())
        .map(|i| bellman_target(batch.rewards[i], batch.dones[i], gamma, max_next[i]))
        .collect())
}

/// Mean squared Bellman error of `net` on `batch` against fixed `targets`.
pub fn bellman_loss(tape: &mut Tape, net: &QNetwork, p: &crate::params::BoundParams, batch: &Batch, targets: &[f64]) -> Result<Var> {
    let images = tape.constant(batch.images.clone());
    let actions = tape.constant(batch.actions.clone());
    let q = net.forward(tape, p, images, actions)?;
    let y = tape.constant(Tensor::new(&[targets.len(), 1], targets.to_vec())?);
    let diff = tape.sub(q, y)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq)?)
}

fn diagnostic(net: &QNetwork, batch: &Batch, targets: &[f64]) -> String {
    let worst = net
        .params()
        .iter()
        .map(|(n, t)| (n, t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    format!(
        "batch indices: {:?}\ntargets: {:?}\nlargest |parameter|: {:?}\nall parameters finite: {}",
        batch.indices,
        targets,
        worst,
        net.params().all_finite()
    )
}

/// One SGD-momentum step on the Bellman loss; returns the loss before the
/// update.
pub fn bellman_train_step(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &Batch,
    gamma: f64,
    opt: &mut SgdMomentum,
    cem: &CemConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let targets = compute_targets(target, batch, gamma, cem, rng)?;
    let mut tape = Tape::new();
    let p = net.params().bind(&mut tape);
    let loss = bellman_loss(&mut tape, net, &p, batch, &targets)?;
    let value = tape.value(loss).item().expect("scalar loss");
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            loss: value,
            diagnostic: diagnostic(net, batch, &targets),
        });
    }
    tape.backward(loss)?;
    let grads = p.grads(&tape);
    opt.step(net.params_mut(), &grads)?;
    Ok(value)
}

/// Architecture state of a search network at one point in training.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSnapshot {
    pub entropies: Vec<f64>,
    pub argmax: Vec<MergeOpKind>,
    /// `max_site |Σ_j w_j − 1|`.
    pub mix_sum_error: f64,
    pub edge_min: f64,
    pub edge_max: f64,
    pub edges_retained: usize,
}

impl ArchSnapshot {
    pub fn of(net: &QNetwork) -> Result<Option<Self>> {
        if net.kind() != NetworkKind::Search {
            return Ok(None);
        }
        let mix = net.mix_weights()?;
        let edges: Vec<f64> = net.edge_weights()?.into_iter().flatten().collect();
        let mut argmax = Vec::with_capacity(mix.len());
        for s in net.sites() {
            argmax.push(harden_logits(net.params().require(&s.fusion.mix_logits_name())?.data()));
        }
        Ok(Some(Self {
            entropies: mix.iter().map(|w| entropy(w)).collect(),
            argmax,
            mix_sum_error: mix
                .iter()
                .map(|w| (w.iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max),
            edge_min: edges.iter().copied().fold(f64::INFINITY, f64::min),
            edge_max: edges.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            edges_retained: edges.iter().filter(|&&w| w > EDGE_THRESHOLD).count(),
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Architecture after this step's update (search networks only).
    pub arch: Option<ArchSnapshot>,
}

/// Owns the network being trained, its target copy and the optimizer.
pub struct Trainer<'a> {
    net: QNetwork,
    target: QNetwork,
    buffer: &'a ReplayBuffer,
    opt: SgdMomentum,
    cfg: TrainerConfig,
    cem: CemConfig,
    sampling_rng: ChaCha8Rng,
    cem_rng: ChaCha8Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(net: QNetwork, buffer: &'a ReplayBuffer, cfg: &TrainerConfig, cem: &CemConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cem.validate()?;
        if buffer.is_empty() {
            return Err(Error::Invalid("cannot train on an empty dataset".into()));
        }
        if buffer.image_size() != net.config().image_size {
            return Err(Error::Config(format!(
                "dataset images are {}px, network expects {}px",
                buffer.image_size(),
                net.config().image_size
            )));
        }
        Ok(Self {
            target: net.clone(),
            net,
            buffer,
            opt: SgdMomentum::new(cfg.learning_rate, cfg.momentum, cfg.l2),
            cfg: cfg.clone(),
            cem: cem.clone(),
            sampling_rng: stream(seed, Subsystem::Sampling, 0),
            cem_rng: stream(seed, Subsystem::Cem, 0),
            step: 0,
        })
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }

    pub fn into_net(self) -> QNetwork {
        self.net
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn cem(&self) -> &CemConfig {
        &self.cem
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        if self.step > 0 && self.step % self.cfg.target_update == 0 {
            self.target = self.net.clone();
        }
        let idx = self.buffer.sample_indices(&mut self.sampling_rng, self.cfg.batch_size);
        let batch = Batch::gather(self.buffer, &idx)?;
        let step = self.step + 1;
        let loss = bellman_train_step(
            &mut self.net,
            &self.target,
            &batch,
            self.cfg.gamma,
            &mut self.opt,
            &self.cem,
            &mut self.cem_rng,
        )
        .map_err(|e| match e {
            Error::NonFiniteLoss { loss, diagnostic, .. } => Error::NonFiniteLoss { step, loss, diagnostic },
            other => other,
        })?;
        self.step = step;
        Ok(StepRecord {
            step,
            loss,
            arch: ArchSnapshot::of(&self.net)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_and_myopic_targets_are_rewards() {
        assert_eq!(bellman_target(1.0, true, 0.9, 123.0), 1.0);
        assert_eq!(bellman_target(-0.01, false, 0.0, 123.0), -0.01);
        assert!((bellman_target(-0.01, false, 0.9, 1.0) - 0.89).abs() < 1e-15);
    }
}
