//! Fixed offline dataset: generation, sampling and the binary file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "VNBF" | u32 version | u32 image_size | u64 seed | u64 count
//! count × record:
//!   s image f64[S·S·3] | s gripper_state f64 | s height f64
//!   action f64[7] | reward f64
//!   s' image f64[S·S·3] | s' gripper_state f64 | s' height f64
//!   done u8
//! ```

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::env::{EnvConfig, GraspAction, GraspEnv, GraspState, GripperCommand, ACTION_FEATURES, SUCCESS_REWARD};
use super::policy::{ExpertPolicy, Policy, RandomPolicy};
use crate::qnet::Reader;
use crate::rng::{stream, Subsystem};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"VNBF";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: GraspState,
    pub a: GraspAction,
    pub r: f64,
    pub s_next: GraspState,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub episodes: usize,
    pub expert_fraction: f64,
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            expert_fraction: 0.5,
            noise: 0.15,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("dataset.episodes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.expert_fraction) {
            return Err(Error::Config("dataset.expert_fraction must lie in [0, 1]".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("dataset.noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub episodes: usize,
    pub expert_episodes: usize,
    pub successes: usize,
    pub expert_successes: usize,
    pub transitions: usize,
}

impl GenerationStats {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes.max(1) as f64
    }
}

/// Immutable transition list. There is no way to modify a buffer once
/// built; [`ReplayBuffer::content_hash`] lets callers verify that.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    image_size: usize,
    seed: u64,
    transitions: Vec<Transition>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeOutcome {
    pub steps: usize,
    pub success: bool,
}

/// Rolls out one episode, returning its transitions.
pub fn rollout<P: Policy>(
    env_cfg: &EnvConfig,
    policy: &mut P,
    env_rng: &mut rand_chacha::ChaCha8Rng,
    policy_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Vec<Transition>, EpisodeOutcome)> {
    let mut env = GraspEnv::reset(env_cfg, env_rng);
    let mut s = env.observe();
    let mut out = Vec::with_capacity(env_cfg.max_steps);
    loop {
        let a = policy.act(&env, &s, policy_rng)?;
        let step = env.step(&a)?;
        let done = step.done;
        out.push(Transition {
            s: s.clone(),
            a,
            r: step.reward,
            s_next: step.state.clone(),
            done,
        });
        if done {
            let outcome = EpisodeOutcome {
                steps: out.len(),
                success: step.success,
            };
            return Ok((out, outcome));
        }
        s = step.state;
    }
}

/// Mixture of noisy scripted-expert and uniform-random episodes. Episode
/// `i` draws from its own seeded streams, so the result does not depend on
/// scheduling.
pub fn generate_dataset(env_cfg: &EnvConfig, cfg: &DatasetConfig, seed: u64) -> Result<(ReplayBuffer, GenerationStats)> {
    env_cfg.validate()?;
    cfg.validate()?;
    let episodes: Vec<(Vec<Transition>, EpisodeOutcome, bool)> = (0..cfg.episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut env_rng = stream(seed, Subsystem::Env, i);
            let mut policy_rng = stream(seed, Subsystem::Dataset, i);
            let expert = policy_rng.gen::<f64>() < cfg.expert_fraction;
            let (t, o) = if expert {
                rollout(env_cfg, &mut ExpertPolicy { noise: cfg.noise }, &mut env_rng, &mut policy_rng)?
            } else {
                rollout(env_cfg, &mut RandomPolicy, &mut env_rng, &mut policy_rng)?
            };
            Ok((t, o, expert))
        })
        .collect::<Result<_>>()?;
    let mut stats = GenerationStats::default();
    let mut transitions = Vec::new();
    for (t, o, expert) in episodes {
        stats.episodes += 1;
        stats.expert_episodes += usize::from(expert);
        stats.successes += usize::from(o.success);
        stats.expert_successes += usize::from(o.success && expert);
        transitions.extend(t);
    }
    stats.transitions = transitions.len();
    Ok((
        ReplayBuffer {
            image_size: env_cfg.image_size,
            seed,
            transitions,
        },
        stats,
    ))
}

/// Streams bytes into a SHA-256 without buffering.
struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn write_state<W: Write>(w: &mut W, s: &GraspState) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity((s.image.len() + 2) * 8);
    for v in s.image.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&s.gripper_state.to_le_bytes());
    buf.extend_from_slice(&s.height.to_le_bytes());
    w.write_all(&buf)
}

impl ReplayBuffer {
    pub fn from_transitions(image_size: usize, seed: u64, transitions: Vec<Transition>) -> Result<Self> {
        for (i, t) in transitions.iter().enumerate() {
            for s in [&t.s, &t.s_next] {
                if s.image.shape() != [image_size, image_size, 3] {
                    return Err(Error::Invalid(format!("transition {i}: image shape {:?}", s.image.shape())));
                }
            }
        }
        Ok(Self {
            image_size,
            seed,
            transitions,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.transitions[i]
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.transitions.len())).collect()
    }

    /// Episodes end at `done`; successes are rewarded transitions.
    pub fn stats(&self) -> GenerationStats {
        GenerationStats {
            episodes: self.transitions.iter().filter(|t| t.done).count(),
            expert_episodes: 0,
            successes: self.transitions.iter().filter(|t| t.r == SUCCESS_REWARD).count(),
            expert_successes: 0,
            transitions: self.transitions.len(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.image_size as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.transitions.len() as u64).to_le_bytes())?;
        for t in &self.transitions {
            write_state(w, &t.s)?;
            let mut buf = Vec::with_capacity(8 * (ACTION_FEATURES + 1));
            for v in t.a.features() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&t.r.to_le_bytes());
            w.write_all(&buf)?;
            write_state(w, &t.s_next)?;
            w.write_all(&[u8::from(t.done)])?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// SHA-256 of the serialized form.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = HashWriter(Sha256::new());
        self.write_to(&mut h).expect("hashing");
        h.0.finalize().into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        if r.take(4)? != DATASET_MAGIC {
            return Err(r.error("bad magic"));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let image_size = r.u32()? as usize;
        if image_size == 0 || image_size > 1024 {
            return Err(r.error(format!("image size {image_size} out of range")));
        }
        let seed = r.u64()?;
        let count = r.u64()?;
        let pixels = image_size * image_size * 3;
        let record = 8 * (2 * (pixels + 2) + ACTION_FEATURES + 1) + 1;
        let expected = (count as u128) * (record as u128);
        if expected != r.remaining() as u128 {
            return Err(r.error(format!(
                "{count} records need {expected} bytes, {} present",
                r.remaining()
            )));
        }
        let mut transitions = Vec::with_capacity(count as usize);
        let mut previous: Option<GraspState> = None;
        for i in 0..count as usize {
            let s = read_state(&mut r, image_size, previous.as_ref(), i)?;
            let raw = r.f64s(ACTION_FEATURES)?;
            let a = decode_action(&raw).ok_or_else(|| r.error(format!("record {i}: invalid action {raw:?}")))?;
            let reward = r.f64()?;
            if !reward.is_finite() {
                return Err(r.error(format!("record {i}: non-finite reward")));
            }
            let s_next = read_state(&mut r, image_size, None, i)?;
            let done = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(r.error(format!("record {i}: done flag {b}"))),
            };
            previous = (!done).then(|| s_next.clone());
            transitions.push(Transition {
                s,
                a,
                r: reward,
                s_next,
                done,
            });
        }
        r.finish()?;
        Ok(Self {
            image_size,
            seed,
            transitions,
        })
    }
}

/// Reads a state, sharing the image with `previous` when identical.
fn read_state(r: &mut Reader<'_>, size: usize, previous: Option<&GraspState>, i: usize) -> Result<GraspState> {
    let data = r.f64s(size * size * 3)?;
    if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(r.error(format!("record {i}: pixel outside [0, 1]")));
    }
    let gripper_state = r.f64()?;
    let height = r.f64()?;
    if gripper_state != 0.0 && gripper_state != 1.0 {
        return Err(r.error(format!("record {i}: gripper state {gripper_state}")));
    }
    if !(0.0..=1.0).contains(&height) {
        return Err(r.error(format!("record {i}: height {height}")));
    }
    let image = match previous {
        Some(p) if p.image.data() == data.as_slice() => Arc::clone(&p.image),
        _ => Arc::new(Tensor::new(&[size, size, 3], data)?),
    };
    Ok(GraspState {
        image,
        gripper_state,
        height,
    })
}

/// Inverse of [`GraspAction::features`]; `None` unless already valid.
fn decode_action(raw: &[f64]) -> Option<GraspAction> {
    let gripper = match (raw[5], raw[6]) {
        (1.0, 0.0) => GripperCommand::Open,
        (0.0, 1.0) => GripperCommand::Close,
        _ => return None,
    };
    let a = GraspAction {
        translation: [raw[0], raw[1], raw[2]],
        rotation: [raw[3], raw[4]],
        gripper,
    };
    a.is_valid().then_some(a)
}
