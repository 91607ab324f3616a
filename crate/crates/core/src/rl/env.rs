//! Toy top-down grasping environment.
//!
//! The gripper hovers over a unit tray at height `z ∈ [0, 1]` and sees an
//! egocentric `S×S×3` crop centred on itself. An episode succeeds when the
//! gripper closes at low height over an object (within the pick radius) and
//! then lifts it to `lift_height`. Motion is applied before the gripper
//! command within a step.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const ACTION_FEATURES: usize = 7;
pub const STATE_SCALARS: usize = 2;
/// Width of the vector the Q-network receives: action features then the
/// state scalars (gripper state, height).
pub const NETWORK_ACTION_DIM: usize = ACTION_FEATURES + STATE_SCALARS;

pub const SUCCESS_REWARD: f64 = 1.0;
pub const STEP_PENALTY: f64 = -0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspAction {
    /// `(dx, dy, dz)` in step units, each in `[-1, 1]`.
    pub translation: [f64; 3],
    /// `(sin θ, cos θ)` of the yaw increment.
    pub rotation: [f64; 2],
    pub gripper: GripperCommand,
}

impl GraspAction {
    pub fn new(translation: [f64; 3], yaw: f64, gripper: GripperCommand) -> Self {
        Self {
            translation,
            rotation: [yaw.sin(), yaw.cos()],
            gripper,
        }
    }

    /// `[dx, dy, dz, sin, cos, open, close]`.
    pub fn features(&self) -> [f64; ACTION_FEATURES] {
        let (open, close) = match self.gripper {
            GripperCommand::Open => (1.0, 0.0),
            GripperCommand::Close => (0.0, 1.0),
        };
        let [dx, dy, dz] = self.translation;
        let [s, c] = self.rotation;
        [dx, dy, dz, s, c, open, close]
    }

    /// Projects an arbitrary feature vector onto the valid action set:
    /// translation clipped, rotation renormalised (identity if degenerate),
    /// gripper command by argmax with ties going to `open`.
    pub fn project(raw: &[f64]) -> Self {
        let clip = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        let (s, c) = (raw[3], raw[4]);
        let norm = (s * s + c * c).sqrt();
        let rotation = if norm.is_finite() && norm > 1e-12 {
            [s / norm, c / norm]
        } else {
            [0.0, 1.0]
        };
        let gripper = if raw[6] > raw[5] {
            GripperCommand::Close
        } else {
            GripperCommand::Open
        };
        Self {
            translation: [clip(raw[0]), clip(raw[1]), clip(raw[2])],
            rotation,
            gripper,
        }
    }

    pub fn is_valid(&self) -> bool {
        let [s, c] = self.rotation;
        self.translation.iter().all(|v| (-1.0..=1.0).contains(v)) && ((s * s + c * c) - 1.0).abs() <= 1e-6
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[0].atan2(self.rotation[1])
    }
}

/// Observation handed to policies and stored in the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspState {
    /// `S×S×3`, pixels in `[0, 1]`.
    pub image: Arc<Tensor>,
    /// 1 when the gripper is closed.
    pub gripper_state: f64,
    pub height: f64,
}

impl GraspState {
    pub fn scalars(&self) -> [f64; STATE_SCALARS] {
        [self.gripper_state, self.height]
    }

    /// Network action row: the action features followed by this state's
    /// scalars.
    pub fn network_action(&self, action: &GraspAction) -> [f64; NETWORK_ACTION_DIM] {
        let mut row = [0.0; NETWORK_ACTION_DIM];
        row[..ACTION_FEATURES].copy_from_slice(&action.features());
        row[ACTION_FEATURES..].copy_from_slice(&self.scalars());
        row
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub image_size: usize,
    pub num_objects: usize,
    pub object_radius: f64,
    /// Max horizontal gripper-to-object distance for a grasp.
    pub pick_radius: f64,
    /// A grasp needs `z` at or below this.
    pub grasp_height: f64,
    /// Holding an object at or above this height is a success.
    pub lift_height: f64,
    pub max_steps: usize,
    /// Tray distance covered by a unit horizontal translation.
    pub xy_step: f64,
    pub z_step: f64,
    /// Half-width of the egocentric view in tray units.
    pub view_half_extent: f64,
    pub start_height: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            num_objects: 1,
            object_radius: 0.2,
            pick_radius: 0.25,
            grasp_height: 0.15,
            lift_height: 0.5,
            max_steps: 15,
            xy_step: 0.5,
            z_step: 1.0,
            view_half_extent: 0.6,
            start_height: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("object_radius", self.object_radius),
            ("pick_radius", self.pick_radius),
            ("xy_step", self.xy_step),
            ("z_step", self.z_step),
            ("view_half_extent", self.view_half_extent),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("env.{name} must be positive")));
        }
        if self.image_size == 0 || self.num_objects == 0 || self.max_steps == 0 {
            return Err(Error::Config("env image_size, num_objects and max_steps must be positive".into()));
        }
        let unit = [
            ("grasp_height", self.grasp_height),
            ("lift_height", self.lift_height),
            ("start_height", self.start_height),
        ];
        if let Some((name, _)) = unit.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("env.{name} must lie in [0, 1]")));
        }
        if self.grasp_height >= self.lift_height {
            return Err(Error::Config("env.grasp_height must be below lift_height".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: GraspState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Clone, Debug)]
pub struct GraspEnv {
    config: EnvConfig,
    gripper: [f64; 3],
    yaw: f64,
    closed: bool,
    objects: Vec<[f64; 2]>,
    held: Option<usize>,
    steps: usize,
    done: bool,
}

const TRAY_MARGIN: f64 = 0.1;

impl GraspEnv {
    /// Fresh episode: gripper open at the tray centre, objects uniform in
    /// the tray interior.
    pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Self {
        let objects = (0..config.num_objects)
            .map(|_| {
                [
                    rng.gen_range(TRAY_MARGIN..1.0 - TRAY_MARGIN),
                    rng.gen_range(TRAY_MARGIN..1.0 - TRAY_MARGIN),
                ]
            })
            .collect();
        Self::with_layout(config, [0.5, 0.5, config.start_height], objects)
    }

    pub fn with_layout(config: &EnvConfig, gripper: [f64; 3], objects: Vec<[f64; 2]>) -> Self {
        Self {
            config: config.clone(),
            gripper,
            yaw: 0.0,
            closed: false,
            objects,
            held: None,
            steps: 0,
            done: false,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn gripper_position(&self) -> [f64; 3] {
        self.gripper
    }

    pub fn objects(&self) -> &[[f64; 2]] {
        &self.objects
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn held(&self) -> Option<usize> {
        self.held
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Index and horizontal distance of the object nearest the gripper.
    pub fn nearest_object(&self) -> (usize, f64) {
        let [gx, gy, _] = self.gripper;
        self.objects
            .iter()
            .enumerate()
            .map(|(i, [ox, oy])| (i, ((ox - gx).powi(2) + (oy - gy).powi(2)).sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one object")
    }

    pub fn observe(&self) -> GraspState {
        GraspState {
            image: Arc::new(self.render()),
            gripper_state: if self.closed { 1.0 } else { 0.0 },
            height: self.gripper[2],
        }
    }

    /// Egocentric view: dim tray floor, black outside the tray, objects as
    /// discs whose red/green channels encode each pixel's offset from the
    /// gripper and whose blue channel lights up while held. The offset
    /// shading keeps object position recoverable after global pooling.
    pub fn render(&self) -> Tensor {
        let s = self.config.image_size;
        let v = self.config.view_half_extent;
        let px = 2.0 * v / s as f64;
        let r = self.config.object_radius;
        let [gx, gy, _] = self.gripper;
        let mut img = Tensor::zeros(&[s, s, 3]);
        let data = img.data_mut();
        for row in 0..s {
            let y = gy - v + (row as f64 + 0.5) * px;
            for col in 0..s {
                let x = gx - v + (col as f64 + 0.5) * px;
                let o = (row * s + col) * 3;
                if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
                    data[o..o + 3].fill(0.15);
                }
                for (i, [ox, oy]) in self.objects.iter().enumerate() {
                    let d = ((x - ox).powi(2) + (y - oy).powi(2)).sqrt();
                    let mask = ((r - d) / px + 0.5).clamp(0.0, 1.0);
                    if mask <= 0.0 {
                        continue;
                    }
                    let held = if self.held == Some(i) { 1.0 } else { 0.2 };
                    let colour = [
                        0.5 + 0.5 * ((x - gx) / v).clamp(-1.0, 1.0),
                        0.5 + 0.5 * ((y - gy) / v).clamp(-1.0, 1.0),
                        held,
                    ];
                    for ch in 0..3 {
                        data[o + ch] = data[o + ch] * (1.0 - mask) + colour[ch] * mask;
                    }
                }
            }
        }
        img
    }

    /// Applies `action` and returns the next observation. Steps after the
    /// episode has ended are an error.
    pub fn step(&mut self, action: &GraspAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Invalid("step called on a finished episode".into()));
        }
        let action = if action.is_valid() {
            *action
        } else {
            log::debug!("clipping invalid action {action:?}");
            let mut raw = [0.0; ACTION_FEATURES];
            raw.copy_from_slice(&action.features());
            GraspAction::project(&raw)
        };
        let c = &self.config;
        let [dx, dy, dz] = action.translation;
        self.gripper[0] = (self.gripper[0] + dx * c.xy_step).clamp(0.0, 1.0);
        self.gripper[1] = (self.gripper[1] + dy * c.xy_step).clamp(0.0, 1.0);
        self.gripper[2] = (self.gripper[2] + dz * c.z_step).clamp(0.0, 1.0);
        self.yaw += action.yaw();

        match action.gripper {
            GripperCommand::Close if !self.closed => {
                self.closed = true;
                let (i, d) = self.nearest_object();
                if self.gripper[2] <= c.grasp_height && d <= c.pick_radius {
                    self.held = Some(i);
                }
            }
            GripperCommand::Open => {
                self.closed = false;
                self.held = None;
            }
            GripperCommand::Close => {}
        }
        if let Some(i) = self.held {
            self.objects[i] = [self.gripper[0], self.gripper[1]];
        }

        self.steps += 1;
        let success = self.held.is_some() && self.gripper[2] >= c.lift_height;
        self.done = success || self.steps >= c.max_steps;
        Ok(StepOutcome {
            state: self.observe(),
            reward: if success { SUCCESS_REWARD } else { STEP_PENALTY },
            done: self.done,
            success,
        })
    }
}
