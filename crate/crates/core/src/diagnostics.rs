//! Finite-difference gradient suite: every tape op, every merge candidate,
//! the attention module, and the Bellman loss of a full search network with
//! respect to each of its parameter tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{Peer, PeerAttentionModule, PeerId};
use crate::fusion::{FusionSupernet, MergeOpKind};
use crate::params::{BoundParams, ParamStore};
use crate::qnet::{random_logits, NetworkConfig, QNetwork};
use crate::rl::{bellman_loss, Batch, GraspAction, GraspState, ReplayBuffer, Transition};
use crate::rng::{stream, Subsystem};
use crate::tensor::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::tensor::{Tape, Tensor, TensorError, TensorResult, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Transitions in the network-level Bellman batch.
    pub network_batch: usize,
    /// Coordinates sampled per network parameter tensor (all when `None`).
    pub coords_per_param: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epsilon: 1e-5,
            tolerance: 1e-4,
            network_batch: 3,
            coords_per_param: Some(12),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
}

impl CaseResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tolerance
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed(self.tolerance))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&CaseResult> {
        self.cases.iter().filter(|c| !c.passed(self.tolerance)).collect()
    }
}

fn tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Invalid(other.to_string()),
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// `Σ out ⊙ r` for a fixed random `r`, so every output element carries a
/// distinct upstream gradient.
fn project(tape: &mut Tape, out: Var, r: &Tensor) -> TensorResult<Var> {
    let c = tape.constant(r.clone());
    let m = tape.mul(out, c)?;
    tape.sum(m)
}

fn collapse(name: &str, report: &GradCheckReport) -> CaseResult {
    CaseResult {
        name: name.to_string(),
        checked: report.checked(),
        skipped_kinks: report.inputs.iter().map(|r| r.skipped_kinks).sum(),
        max_rel_err: report.max_rel_err(),
    }
}

struct Runner<'a> {
    cfg: &'a SuiteConfig,
    rng: ChaCha8Rng,
    cases: Vec<CaseResult>,
}

impl Runner<'_> {
    fn gc(&self) -> GradCheckConfig {
        GradCheckConfig {
            epsilon: self.cfg.epsilon,
            seed: self.cfg.seed,
            ..GradCheckConfig::default()
        }
    }

    /// Checks `op` with its output projected onto a random tensor of
    /// `out_shape`.
    fn op<F>(&mut self, name: &str, inputs: Vec<Tensor>, out_shape: &[usize], op: F) -> Result<()>
    where
        F: Fn(&mut Tape, &[Var]) -> TensorResult<Var>,
    {
        let r = uniform(&mut self.rng, out_shape, -1.0, 1.0);
        let report = check_gradients(
            &inputs,
            |tape, v| {
                let out = op(tape, v)?;
                project(tape, out, &r)
            },
            &self.gc(),
        )?;
        self.cases.push(collapse(name, &report));
        Ok(())
    }

    fn u(&mut self, shape: &[usize]) -> Tensor {
        uniform(&mut self.rng, shape, -1.0, 1.0)
    }
}

fn op_cases(runner: &mut Runner) -> Result<()> {
    let u = |r: &mut Runner, s: &[usize]| r.u(s);
    let (a, b) = (u(runner, &[2, 3, 4]), u(runner, &[2, 3, 4]));
    runner.op("op/add", vec![a.clone(), b.clone()], &[2, 3, 4], |t, v| t.add(v[0], v[1]))?;
    let row = u(runner, &[4]);
    runner.op("op/add_broadcast", vec![a.clone(), row.clone()], &[2, 3, 4], |t, v| t.add(v[0], v[1]))?;
    let mid = u(runner, &[1, 3, 1]);
    runner.op("op/sub_broadcast", vec![a.clone(), mid], &[2, 3, 4], |t, v| t.sub(v[0], v[1]))?;
    runner.op("op/mul", vec![a.clone(), b], &[2, 3, 4], |t, v| t.mul(v[0], v[1]))?;
    let s = u(runner, &[1]);
    runner.op("op/mul_scalar", vec![a.clone(), s], &[2, 3, 4], |t, v| t.mul(v[0], v[1]))?;
    runner.op("op/relu", vec![a.clone()], &[2, 3, 4], |t, v| t.relu(v[0]))?;
    runner.op("op/sigmoid", vec![a.clone()], &[2, 3, 4], |t, v| t.sigmoid(v[0]))?;
    runner.op("op/scale", vec![a.clone()], &[2, 3, 4], |t, v| t.scale(v[0], -1.7))?;
    runner.op("op/sum", vec![a.clone()], &[], |t, v| t.sum(v[0]))?;
    runner.op("op/mean", vec![a.clone()], &[], |t, v| t.mean(v[0]))?;
    runner.op("op/reshape", vec![a.clone()], &[6, 4], |t, v| t.reshape(v[0], &[6, 4]))?;

    let (x, w) = (u(runner, &[3, 4]), u(runner, &[4, 5]));
    runner.op("op/matmul", vec![x, w], &[3, 5], |t, v| t.matmul(v[0], v[1]))?;
    let (x, w) = (u(runner, &[2, 3, 4]), u(runner, &[2, 4, 2]));
    runner.op("op/batch_matmul", vec![x, w], &[2, 3, 2], |t, v| t.batch_matmul(v[0], v[1]))?;

    // (input, kernel, c_in, c_out, stride, dilation)
    let convs = [
        ("op/conv2d_3x3", 5, 3, 3, 4, 1, 1),
        ("op/conv2d_stride2", 6, 3, 2, 3, 2, 1),
        ("op/conv2d_dilated2", 7, 3, 2, 3, 1, 2),
        ("op/conv2d_dilated4_stride2", 9, 3, 2, 2, 2, 4),
        ("op/conv2d_1x1", 4, 1, 3, 2, 1, 1),
    ];
    for (name, size, k, cin, cout, stride, dilation) in convs {
        let x = u(runner, &[2, size, size, cin]);
        let w = u(runner, &[k, k, cin, cout]);
        let out = size.div_ceil(stride);
        runner.op(name, vec![x, w], &[2, out, out, cout], move |t, v| t.conv2d(v[0], v[1], stride, dilation))?;
    }

    let m = u(runner, &[2, 4, 4, 3]);
    runner.op("op/avg_pool", vec![m.clone()], &[2, 2, 2, 3], |t, v| t.avg_pool(v[0], 2))?;
    runner.op("op/global_avg_pool", vec![m], &[2, 3], |t, v| t.global_avg_pool(v[0]))?;
    let z = u(runner, &[5]);
    runner.op("op/softmax", vec![z.clone()], &[5], |t, v| t.softmax(v[0]))?;
    runner.op("op/select", vec![z], &[1], |t, v| {
        let s = t.softmax(v[0])?;
        t.select(s, 3)
    })?;
    let (p, q) = (u(runner, &[2, 2, 2, 3]), u(runner, &[2, 2, 2, 1]));
    runner.op("op/concat_channels", vec![p, q], &[2, 2, 2, 4], |t, v| t.concat_channels(&[v[0], v[1]]))?;
    let g = u(runner, &[2, 1, 1, 3]);
    runner.op("op/broadcast_to", vec![g], &[2, 2, 2, 3], |t, v| t.broadcast_to(v[0], &[2, 2, 2, 3]))?;
    let ws = vec![u(runner, &[3]), u(runner, &[2, 3]), u(runner, &[2, 3]), u(runner, &[2, 3])];
    runner.op("op/weighted_sum", ws, &[2, 3], |t, v| {
        let w = t.softmax(v[0])?;
        t.weighted_sum(w, &v[1..])
    })?;
    Ok(())
}

/// Parameters as a sorted list of names and tensors, for checks that treat
/// every parameter as an input.
fn flatten(store: &ParamStore) -> (Vec<String>, Vec<Tensor>) {
    store.iter().map(|(n, t)| (n.clone(), t.clone())).unzip()
}

fn bind(names: &[String], vars: &[Var]) -> BoundParams {
    BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()))
}

fn module_cases(runner: &mut Runner) -> Result<()> {
    let (h, w, c, a) = (3, 3, 4, 5);
    let site = FusionSupernet::new(1, h, w, c, a);
    let x = runner.u(&[2, h, w, c]);
    let act = runner.u(&[2, a]);
    for kind in MergeOpKind::ALL {
        let mut store = ParamStore::new();
        site.init_params(&mut store, &mut runner.rng, &[kind], false);
        let (names, mut inputs) = flatten(&store);
        inputs.splice(0..0, [x.clone(), act.clone()]);
        let site = &site;
        runner.op(&format!("merge/{kind}"), inputs, &[2, h, w, c], |t, v| {
            let p = bind(&names, &v[2..]);
            site.merge(t, &p, kind, v[0], v[1]).map_err(tensor_error)
        })?;
    }

    let mut store = ParamStore::new();
    site.init_params(&mut store, &mut runner.rng, &MergeOpKind::ALL, true);
    let logits = runner.u(&[MergeOpKind::ALL.len()]);
    store.insert(site.mix_logits_name(), logits);
    let (names, mut inputs) = flatten(&store);
    inputs.splice(0..0, [x.clone(), act.clone()]);
    runner.op("merge/supernet_mix", inputs, &[2, h, w, c], |t, v| {
        let p = bind(&names, &v[2..]);
        site.fuse(t, &p, v[0], v[1]).map_err(tensor_error)
    })?;

    let peers = vec![
        Peer { id: PeerId::Action, channels: a, spatial: None },
        Peer { id: PeerId::Dilated(1), channels: 2, spatial: Some(4) },
        Peer { id: PeerId::Site(1), channels: 3, spatial: Some(h * w) },
    ];
    let module = PeerAttentionModule::searched(2, c, h * w, peers);
    let mut store = ParamStore::new();
    module.init_params(&mut store, &mut runner.rng);
    store.insert(module.edge_logits_name(), runner.u(&[3]));
    let (names, params) = flatten(&store);
    let mut inputs = vec![x, act, runner.u(&[2, 2, 2, 2]), runner.u(&[2, h, w, 3])];
    inputs.extend(params);
    runner.op("attention/peer_gate", inputs, &[2, h, w, c], |t, v| {
        let p = bind(&names, &v[4..]);
        module.attend(t, &p, v[0], &v[1..4]).map_err(tensor_error)
    })?;
    Ok(())
}

/// A small batch of synthetic transitions with the network's input shapes.
fn synthetic_batch(cfg: &NetworkConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let s = cfg.image_size;
    let state = |rng: &mut ChaCha8Rng| GraspState {
        image: std::sync::Arc::new(uniform(rng, &[s, s, 3], 0.0, 1.0)),
        gripper_state: f64::from(rng.gen_range(0..2u8)),
        height: rng.gen_range(0.0..1.0),
    };
    let transitions = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Transition {
                s: state(rng),
                a: GraspAction::project(&raw),
                r: -0.01,
                s_next: state(rng),
                done: true,
            }
        })
        .collect();
    let buffer = ReplayBuffer::from_transitions(s, 0, transitions)?;
    Batch::gather(&buffer, &(0..n).collect::<Vec<_>>())
}

fn network_cases(runner: &mut Runner, net_cfg: &NetworkConfig) -> Result<()> {
    let mut net = QNetwork::build_search_network(net_cfg, runner.cfg.seed)?;
    random_logits(&mut net, &mut runner.rng, 1.0);
    let batch = synthetic_batch(net_cfg, runner.cfg.network_batch, &mut runner.rng)?;
    let targets: Vec<f64> = (0..batch.len()).map(|_| runner.rng.gen_range(-0.1..1.0)).collect();
    let (names, inputs) = flatten(net.params());
    let gc = GradCheckConfig {
        max_coords_per_input: runner.cfg.coords_per_param,
        ..runner.gc()
    };
    let report = check_gradients(
        &inputs,
        |tape, v| {
            let p = bind(&names, v);
            bellman_loss(tape, &net, &p, &batch, &targets).map_err(tensor_error)
        },
        &gc,
    )?;
    for (name, r) in names.iter().zip(&report.inputs) {
        runner.cases.push(CaseResult {
            name: format!("bellman/{name}"),
            checked: r.checked,
            skipped_kinks: r.skipped_kinks,
            max_rel_err: r.max_rel_err,
        });
    }
    Ok(())
}

/// Runs every case. The network part uses a search network built from
/// `net_cfg` with random (non-uniform) architecture logits.
pub fn run_suite(net_cfg: &NetworkConfig, cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut runner = Runner {
        cfg,
        rng: stream(cfg.seed, Subsystem::GradCheck, 0),
        cases: Vec::new(),
    };
    op_cases(&mut runner)?;
    module_cases(&mut runner)?;
    network_cases(&mut runner, net_cfg)?;
    Ok(SuiteReport {
        tolerance: cfg.tolerance,
        cases: runner.cases,
    })
}
