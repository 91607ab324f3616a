use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cem::{cem_maximize, CemConfig};
use super::env::{GraspAction, GraspEnv, GraspState, GripperCommand};
use crate::qnet::QNetwork;
use crate::Result;

pub trait Policy {
    /// Chooses an action. `env` exposes privileged simulator state, which
    /// only scripted policies may use.
    fn act(&mut self, env: &GraspEnv, state: &GraspState, rng: &mut ChaCha8Rng) -> Result<GraspAction>;
}

/// Uniform over translations, yaw and gripper command.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&mut self, _env: &GraspEnv, _state: &GraspState, rng: &mut ChaCha8Rng) -> Result<GraspAction> {
        let t = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let g = if rng.gen_bool(0.5) {
            GripperCommand::Open
        } else {
            GripperCommand::Close
        };
        Ok(GraspAction::new(t, yaw, g))
    }
}

/// Scripted grasp: move over the nearest object while descending, close,
/// lift. A failed close is followed by reopening in place. Gaussian noise
/// of standard deviation `noise` perturbs the horizontal motion.
#[derive(Clone, Copy, Debug)]
pub struct ExpertPolicy {
    pub noise: f64,
}

impl Policy for ExpertPolicy {
    fn act(&mut self, env: &GraspEnv, _state: &GraspState, rng: &mut ChaCha8Rng) -> Result<GraspAction> {
        let c = env.config();
        let [gx, gy, gz] = env.gripper_position();
        if env.held().is_some() {
            return Ok(GraspAction::new([0.0, 0.0, 1.0], 0.0, GripperCommand::Close));
        }
        let (i, _) = env.nearest_object();
        let [ox, oy] = env.objects()[i];
        let (tx, ty) = ((ox - gx) / c.xy_step, (oy - gy) / c.xy_step);
        let reachable = tx.abs() <= 1.0 && ty.abs() <= 1.0;
        let (nx, ny) = if self.noise > 0.0 {
            let n = Normal::new(0.0, self.noise).expect("positive std");
            (n.sample(rng), n.sample(rng))
        } else {
            (0.0, 0.0)
        };
        let translation = [(tx + nx).clamp(-1.0, 1.0), (ty + ny).clamp(-1.0, 1.0), -1.0];
        let low = gz - c.z_step <= c.grasp_height;
        let gripper = if !env.is_closed() && reachable && low {
            GripperCommand::Close
        } else {
            GripperCommand::Open
        };
        Ok(GraspAction::new(translation, 0.0, gripper))
    }
}

/// Greedy CEM maximisation of a Q-network.
#[derive(Clone, Debug)]
pub struct CemPolicy<'a> {
    pub net: &'a QNetwork,
    pub cem: CemConfig,
}

impl Policy for CemPolicy<'_> {
    fn act(&mut self, _env: &GraspEnv, state: &GraspState, rng: &mut ChaCha8Rng) -> Result<GraspAction> {
        cem_maximize(self.net, state, &self.cem, rng)
    }
}
