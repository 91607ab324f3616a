//! Action-merging supernet sites.
//!
//! A site receives a visual feature map `x: N×H×W×C` and the low-dimensional
//! action vector `a: N×A` and produces a feature map of the same shape. Five
//! candidate merges are available:
//!
//! | kind          | output                                              |
//! |---------------|-----------------------------------------------------|
//! | `noop`        | `x`                                                 |
//! | `add`         | `x + tile(expand(a))`, `expand: A → C`              |
//! | `concat`      | `proj([x ‖ tile(a)])`, `proj` a 1×1 conv `C+A → C`  |
//! | `hadamard`    | `x ⊙ tile(spatial(a))`, `spatial: A → H·W`          |
//! | `action_conv` | `x * filtergen(a)`, per-example 1×1 filters `C → C` |
//!
//! In search mode the candidates are mixed by `softmax(mix_logits)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{truncated_normal_tensor, BoundParams, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MergeOpKind {
    #[serde(rename = "noop")]
    NoOp,
    #[serde(rename = "add")]
    Add,
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "hadamard")]
    Hadamard,
    #[serde(rename = "action_conv")]
    ActionConv,
}

impl MergeOpKind {
    /// All variants in logit order.
    pub const ALL: [MergeOpKind; 5] = [
        MergeOpKind::NoOp,
        MergeOpKind::Add,
        MergeOpKind::Concat,
        MergeOpKind::Hadamard,
        MergeOpKind::ActionConv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MergeOpKind::NoOp => "noop",
            MergeOpKind::Add => "add",
            MergeOpKind::Concat => "concat",
            MergeOpKind::Hadamard => "hadamard",
            MergeOpKind::ActionConv => "action_conv",
        }
    }

    fn counter(self) -> &'static str {
        match self {
            MergeOpKind::NoOp => "merge.noop",
            MergeOpKind::Add => "merge.add",
            MergeOpKind::Concat => "merge.concat",
            MergeOpKind::Hadamard => "merge.hadamard",
            MergeOpKind::ActionConv => "merge.action_conv",
        }
    }
}

impl fmt::Display for MergeOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MergeOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown merge op `{s}`")))
    }
}

/// Number of candidate evaluations recorded on `tape` across all sites.
pub fn merge_evaluations(tape: &Tape) -> usize {
    MergeOpKind::ALL.iter().map(|k| tape.counter(k.counter())).sum()
}

/// Argmax with ties resolved to the lowest index.
pub fn harden_logits(logits: &[f64]) -> MergeOpKind {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().take(MergeOpKind::ALL.len()) {
        if v > logits[best] {
            best = i;
        }
    }
    MergeOpKind::ALL[best]
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(weights: &[f64]) -> f64 {
    weights.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// One action-merging site and the parameter names it owns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionSupernet {
    pub site: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub action_dim: usize,
}

impl FusionSupernet {
    pub fn new(site: usize, height: usize, width: usize, channels: usize, action_dim: usize) -> Self {
        Self {
            site,
            height,
            width,
            channels,
            action_dim,
        }
    }

    pub fn param_name(&self, role: &str) -> String {
        format!("fusion.{}.{role}", self.site)
    }

    pub fn mix_logits_name(&self) -> String {
        self.param_name("mix_logits")
    }

    /// Parameters of candidate `kind` as `(name, shape)`.
    pub fn param_shapes(&self, kind: MergeOpKind) -> Vec<(String, Vec<usize>)> {
        let (a, c, hw) = (self.action_dim, self.channels, self.height * self.width);
        let pair = |role: &str, w: Vec<usize>, b: usize| {
            vec![
                (self.param_name(&format!("{role}.weight")), w),
                (self.param_name(&format!("{role}.bias")), vec![b]),
            ]
        };
        match kind {
            MergeOpKind::NoOp => vec![],
            MergeOpKind::Add => pair("expand", vec![a, c], c),
            MergeOpKind::Concat => pair("concat_proj", vec![1, 1, c + a, c], c),
            MergeOpKind::Hadamard => pair("spatial", vec![a, hw], hw),
            MergeOpKind::ActionConv => pair("filtergen", vec![a, c * c], c * c),
        }
    }

    /// Draws parameters for `kinds` (plus zero mix logits when
    /// `with_logits`). Weights are truncated normal; biases start at the
    /// merge's neutral element (ones for the spatial mask, the identity
    /// filter bank for action-conv, zero elsewhere).
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        rng: &mut R,
        kinds: &[MergeOpKind],
        with_logits: bool,
    ) {
        let (a, c) = (self.action_dim, self.channels);
        for &kind in kinds {
            for (name, shape) in self.param_shapes(kind) {
                let value = if name.ends_with(".weight") {
                    let fan_in = match kind {
                        MergeOpKind::Concat => c + a,
                        MergeOpKind::ActionConv => a * c,
                        _ => a,
                    };
                    truncated_normal_tensor(rng, &shape, fan_in)
                } else {
                    match kind {
                        MergeOpKind::Hadamard => Tensor::ones(&shape),
                        MergeOpKind::ActionConv => Tensor::eye(c).reshape(&shape).expect("c*c bias"),
                        _ => Tensor::zeros(&shape),
                    }
                };
                store.insert(name, value);
            }
        }
        if with_logits {
            store.insert(self.mix_logits_name(), Tensor::zeros(&[MergeOpKind::ALL.len()]));
        }
    }

    fn check_inputs(&self, tape: &Tape, x: Var, a: Var) -> Result<usize> {
        let xs = tape.shape(x);
        let n = xs.first().copied().unwrap_or(0);
        let expected = [n, self.height, self.width, self.channels];
        if xs != expected {
            return Err(TensorError::ShapeMismatch {
                op: "fusion input",
                left: xs.to_vec(),
                right: expected.to_vec(),
            }
            .into());
        }
        let as_ = tape.shape(a);
        if as_ != [n, self.action_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "fusion action",
                left: as_.to_vec(),
                right: vec![n, self.action_dim],
            }
            .into());
        }
        Ok(n)
    }

    fn dense(&self, tape: &mut Tape, p: &BoundParams, role: &str, a: Var) -> Result<Var> {
        let w = p.get(&self.param_name(&format!("{role}.weight")))?;
        let b = p.get(&self.param_name(&format!("{role}.bias")))?;
        let y = tape.matmul(a, w)?;
        Ok(tape.add(y, b)?)
    }

    /// `x + T(expand(a))`.
    pub fn merge_add(&self, tape: &mut Tape, p: &BoundParams, x: Var, a: Var) -> Result<Var> {
        let n = self.check_inputs(tape, x, a)?;
        tape.count(MergeOpKind::Add.counter());
        let e = self.dense(tape, p, "expand", a)?;
        let e = tape.reshape(e, &[n, 1, 1, self.channels])?;
        Ok(tape.add(x, e)?)
    }

    /// `proj([x ‖ T(a)])`, projected back to `C` channels.
    pub fn merge_concat(&self, tape: &mut Tape, p: &BoundParams, x: Var, a: Var) -> Result<Var> {
        let n = self.check_inputs(tape, x, a)?;
        tape.count(MergeOpKind::Concat.counter());
        let ar = tape.reshape(a, &[n, 1, 1, self.action_dim])?;
        let tiled = tape.broadcast_to(ar, &[n, self.height, self.width, self.action_dim])?;
        let cat = tape.concat_channels(&[x, tiled])?;
        let w = p.get(&self.param_name("concat_proj.weight"))?;
        let b = p.get(&self.param_name("concat_proj.bias"))?;
        let y = tape.conv2d(cat, w, 1, 1)?;
        Ok(tape.add(y, b)?)
    }

    /// `x ⊙ T(g(a))` with `g(a)` a spatial `H×W` mask shared by all channels.
    pub fn merge_hadamard(&self, tape: &mut Tape, p: &BoundParams, x: Var, a: Var) -> Result<Var> {
        let n = self.check_inputs(tape, x, a)?;
        tape.count(MergeOpKind::Hadamard.counter());
        let g = self.dense(tape, p, "spatial", a)?;
        let g = tape.reshape(g, &[n, self.height, self.width, 1])?;
        Ok(tape.mul(x, g)?)
    }

    /// `x * c(a)`: every example is convolved with its own generated 1×1
    /// filter bank, laid out `C_in × C_out`.
    pub fn merge_actionconv(&self, tape: &mut Tape, p: &BoundParams, x: Var, a: Var) -> Result<Var> {
        let n = self.check_inputs(tape, x, a)?;
        tape.count(MergeOpKind::ActionConv.counter());
        let (hw, c) = (self.height * self.width, self.channels);
        let filters = self.dense(tape, p, "filtergen", a)?;
        let filters = tape.reshape(filters, &[n, c, c])?;
        let xr = tape.reshape(x, &[n, hw, c])?;
        let y = tape.batch_matmul(xr, filters)?;
        Ok(tape.reshape(y, &[n, self.height, self.width, c])?)
    }

    pub fn merge(&self, tape: &mut Tape, p: &BoundParams, kind: MergeOpKind, x: Var, a: Var) -> Result<Var> {
        match kind {
            MergeOpKind::NoOp => {
                self.check_inputs(tape, x, a)?;
                tape.count(MergeOpKind::NoOp.counter());
                Ok(x)
            }
            MergeOpKind::Add => self.merge_add(tape, p, x, a),
            MergeOpKind::Concat => self.merge_concat(tape, p, x, a),
            MergeOpKind::Hadamard => self.merge_hadamard(tape, p, x, a),
            MergeOpKind::ActionConv => self.merge_actionconv(tape, p, x, a),
        }
    }

    /// `Σ_j softmax(w)_j · f_j(x, a)` over all five candidates.
    pub fn fuse(&self, tape: &mut Tape, p: &BoundParams, x: Var, a: Var) -> Result<Var> {
        let logits = p.get(&self.mix_logits_name())?;
        let weights = tape.softmax(logits)?;
        let mut candidates = Vec::with_capacity(MergeOpKind::ALL.len());
        for kind in MergeOpKind::ALL {
            candidates.push(self.merge(tape, p, kind, x, a)?);
        }
        Ok(tape.weighted_sum(weights, &candidates)?)
    }

    pub fn mix_weights(&self, store: &ParamStore) -> Result<Vec<f64>> {
        let logits = store.require(&self.mix_logits_name())?;
        Ok(crate::tensor::softmax_values(logits.data()))
    }

    pub fn harden(&self, store: &ParamStore) -> Result<MergeOpKind> {
        Ok(harden_logits(store.require(&self.mix_logits_name())?.data()))
    }

    /// Multiply-accumulates of one candidate for a single example.
    pub fn macs(&self, kind: MergeOpKind) -> f64 {
        let (a, c, hw) = (self.action_dim as f64, self.channels as f64, (self.height * self.width) as f64);
        match kind {
            MergeOpKind::NoOp => 0.0,
            MergeOpKind::Add => a * c,
            MergeOpKind::Concat => hw * (c + a) * c,
            MergeOpKind::Hadamard => a * hw + hw * c,
            MergeOpKind::ActionConv => a * c * c + hw * c * c,
        }
    }

    /// Multiply-accumulates of the soft mixture: every candidate plus the
    /// weighted sum.
    pub fn supernet_macs(&self) -> f64 {
        let mix = (MergeOpKind::ALL.len() * self.height * self.width * self.channels) as f64;
        MergeOpKind::ALL.iter().map(|&k| self.macs(k)).sum::<f64>() + mix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harden_examples() {
        assert_eq!(harden_logits(&[0.0, 3.0, 0.0, 0.0, 0.0]), MergeOpKind::Add);
        assert_eq!(harden_logits(&[0.0; 5]), MergeOpKind::NoOp);
        assert_eq!(harden_logits(&[1.0, 0.0, 2.0, 2.0, 0.0]), MergeOpKind::Concat);
    }

    #[test]
    fn names_round_trip() {
        for k in MergeOpKind::ALL {
            assert_eq!(k.name().parse::<MergeOpKind>().unwrap(), k);
            assert_eq!(MergeOpKind::from_index(k.index()), Some(k));
        }
        assert!("conv".parse::<MergeOpKind>().is_err());
    }

    #[test]
    fn entropy_of_uniform_is_log_n() {
        assert!((entropy(&[0.2; 5]) - 5f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
    }
}
