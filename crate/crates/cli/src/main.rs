//! `vnas`: dataset generation, one-shot architecture search, retraining,
//! evaluation, architecture export and gradient checking.
//!
//! Machine-readable results go to stdout as single JSON lines; progress and
//! diagnostics go to stderr through the logger (`VNAS_LOG_LEVEL`).

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use vnas_core::config::RunConfig;
use vnas_core::diagnostics::{run_suite, SuiteConfig};
use vnas_core::qnet::{load_checkpoint, save_checkpoint, ArchitectureSpec, QNetwork};
use vnas_core::rl::{
    evaluate_policy, evaluate_with, generate_dataset, run_training, EvalResult, ExpertPolicy, MetricsRow,
    RandomPolicy, ReplayBuffer, StepRecord, Trainer, TrainingObserver,
};

use output::{hex, Failure, Outputs};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  configuration could not be read as TOML or failed validation
  3  file I/O failure
  4  non-finite training loss (outputs are kept with a .partial suffix)
  5  malformed or mismatched input artifact (dataset, checkpoint, spec)
  6  gradient check failed";

#[derive(Parser, Debug)]
#[command(name = "vnas", version, about = "One-shot architecture search for vision-action Q-networks", after_help = EXIT_CODES)]
struct Cli {
    /// Run configuration (TOML); omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for episode-parallel work (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset file written by `gen-data`.
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Training steps, overriding `trainer.steps`.
    #[arg(long)]
    steps: Option<usize>,

    /// Episodes per periodic evaluation, overriding `trainer.eval_episodes`.
    #[arg(long)]
    eval_episodes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an offline dataset of scripted and random episodes.
    GenData {
        /// Dataset file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a search network and extract its architecture.
    Search(TrainArgs),
    /// Train a fixed network built from an architecture spec.
    Retrain {
        #[command(flatten)]
        train: TrainArgs,

        /// Architecture spec written by `search`.
        #[arg(long, required_unless_present = "baseline")]
        spec: Option<PathBuf>,

        /// Use the single-add baseline architecture instead of a spec.
        #[arg(long, conflicts_with = "spec")]
        baseline: bool,

        /// Start from the weights in this checkpoint instead of a fresh
        /// initialization.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Evaluate a policy and print its success rate.
    Eval {
        /// Network weights to evaluate.
        #[arg(long, required_unless_present_any = ["expert", "random"])]
        checkpoint: Option<PathBuf>,

        /// Architecture of the checkpoint; defaults to the baseline.
        #[arg(long)]
        spec: Option<PathBuf>,

        /// The checkpoint holds a search network.
        #[arg(long, conflicts_with = "spec")]
        search: bool,

        /// Evaluate the scripted expert instead of a network.
        #[arg(long, conflicts_with_all = ["checkpoint", "random"])]
        expert: bool,

        /// Action noise of the scripted expert.
        #[arg(long, default_value_t = 0.0, requires = "expert")]
        noise: f64,

        /// Evaluate uniformly random actions.
        #[arg(long, conflicts_with = "checkpoint")]
        random: bool,

        #[arg(long)]
        eval_episodes: Option<usize>,
    },
    /// Print an architecture spec as a merge/edge listing.
    Export {
        #[arg(long)]
        spec: PathBuf,

        /// Write the listing here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite on the configured network.
    Gradcheck {
        /// Coordinates sampled per network parameter tensor.
        #[arg(long, default_value_t = 12)]
        coords: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn apply_train_args(cfg: &mut RunConfig, args: &TrainArgs) {
    if let Some(s) = args.steps {
        cfg.trainer.steps = s;
    }
    if let Some(e) = args.eval_episodes {
        cfg.trainer.eval_episodes = e;
    }
    if let Some(d) = &args.dataset {
        cfg.paths.dataset = Some(d.display().to_string());
    }
    if let Some(o) = &args.out {
        cfg.paths.out_dir = Some(o.display().to_string());
    }
}

fn required(path: &Option<String>, what: &str) -> Result<PathBuf, Failure> {
    path.as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| Failure::Config(format!("no {what} given (flag or [paths] in the config)")))
}

fn load_dataset(cfg: &RunConfig) -> Result<ReplayBuffer, Failure> {
    let path = required(&cfg.paths.dataset, "dataset")?;
    let buffer = ReplayBuffer::load(&path).map_err(Failure::artifact)?;
    log::info!("loaded {} transitions from {}", buffer.len(), path.display());
    Ok(buffer)
}

fn cmd_gen_data(mut cfg: RunConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    if let Some(o) = out {
        cfg.paths.dataset = Some(o.display().to_string());
    }
    cfg.validate().map_err(Failure::from)?;
    let path = required(&cfg.paths.dataset, "output path")?;
    let mut outputs = Outputs::beside(&path)?;
    let (buffer, stats) = generate_dataset(&cfg.env, &cfg.dataset, cfg.seed)?;
    buffer.save(&outputs.claim_file(&path)).map_err(Failure::from)?;
    outputs.write_config(&cfg)?;
    outputs.commit()?;
    outputs.write_metadata("gen-data", json!("ok"))?;
    println!(
        "{}",
        json!({
            "command": "gen-data",
            "path": path,
            "episodes": stats.episodes,
            "expert_episodes": stats.expert_episodes,
            "transitions": stats.transitions,
            "success_fraction": stats.success_rate(),
            "sha256": hex(&buffer.content_hash()),
        })
    );
    Ok(())
}

/// Streams metrics rows to CSV and writes periodic checkpoints.
struct RunRecorder<'a> {
    outputs: &'a mut Outputs,
    metrics: csv::Writer<std::fs::File>,
    sites: usize,
    checkpoint_every: usize,
}

impl<'a> RunRecorder<'a> {
    fn new(outputs: &'a mut Outputs, sites: usize, checkpoint_every: usize) -> Result<Self, Failure> {
        let path = outputs.claim("metrics.csv");
        let file = std::fs::File::create(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let mut metrics = csv::Writer::from_writer(file);
        metrics.write_record(MetricsRow::csv_header(sites)).map_err(Failure::csv)?;
        metrics.flush().map_err(|e| Failure::Io(e.to_string()))?;
        Ok(Self {
            outputs,
            metrics,
            sites,
            checkpoint_every,
        })
    }
}

impl TrainingObserver for RunRecorder<'_> {
    fn on_step(&mut self, trainer: &Trainer, record: &StepRecord) -> vnas_core::Result<()> {
        if self.checkpoint_every > 0 && record.step % self.checkpoint_every == 0 {
            let path = self.outputs.claim(&format!("checkpoints/step_{:06}.vnas", record.step));
            save_checkpoint(trainer.net().params(), &path)?;
        }
        Ok(())
    }

    fn on_eval(&mut self, _trainer: &Trainer, row: &MetricsRow) -> vnas_core::Result<()> {
        log::info!(
            "step {} loss {:.5} eval success {:.3} ± {:.3}",
            row.step,
            row.loss,
            row.eval.success_rate,
            row.eval.ci95
        );
        self.metrics
            .write_record(row.csv_record(self.sites))
            .map_err(|e| vnas_core::Error::Io(std::io::Error::other(e)))?;
        self.metrics.flush()?;
        Ok(())
    }
}

/// Trains `net`, recording into `outputs`; returns the trained network and
/// the evaluation of its final weights.
fn train(cfg: &RunConfig, net: QNetwork, buffer: &ReplayBuffer, outputs: &mut Outputs) -> Result<(QNetwork, EvalResult), Failure> {
    let sites = net.sites().len();
    let mut trainer = Trainer::new(net, buffer, &cfg.trainer, &cfg.cem, cfg.seed)?;
    let rows = {
        let mut recorder = RunRecorder::new(outputs, sites, cfg.trainer.checkpoint_every)?;
        let rows = run_training(&mut trainer, &cfg.env, cfg.seed, &mut recorder);
        recorder.metrics.flush().map_err(|e| Failure::Io(e.to_string()))?;
        rows?
    };
    let net = trainer.into_net();
    let last = match rows.last() {
        Some(r) if r.step == cfg.trainer.steps => r.eval,
        _ => evaluate_policy(&net, &cfg.env, &cfg.cem, cfg.trainer.eval_episodes, cfg.seed)?,
    };
    Ok((net, last))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    required(&cfg.paths.out_dir, "output directory")
}

fn finish_failed(outputs: &Outputs, command: &str, failure: &Failure) {
    let _ = outputs.write_metadata(command, json!({"failed": failure.to_string(), "exit_code": failure.code()}));
}

fn cmd_search(cfg: RunConfig) -> Result<(), Failure> {
    cfg.validate().map_err(Failure::from)?;
    let dir = out_dir(&cfg)?;
    let buffer = load_dataset(&cfg)?;
    let net = QNetwork::build_search_network(&cfg.network, cfg.seed)?;
    let mut outputs = Outputs::in_dir(&dir)?;
    outputs.write_config(&cfg)?;
    let (net, eval) = match train(&cfg, net, &buffer, &mut outputs) {
        Ok(v) => v,
        Err(f) => {
            finish_failed(&outputs, "search", &f);
            return Err(f);
        }
    };
    let spec = net.extract_architecture(cfg.seed, cfg.trainer.steps as u64)?;
    save_checkpoint(net.params(), &outputs.claim("checkpoint.vnas"))?;
    spec.save(&outputs.claim("architecture.toml"))?;
    outputs.commit()?;
    outputs.write_metadata("search", json!("ok"))?;
    println!(
        "{}",
        json!({
            "command": "search",
            "out": dir,
            "steps": cfg.trainer.steps,
            "final_success": eval.success_rate,
            "ci95": eval.ci95,
            "merges": spec.sites.iter().map(|s| s.merge.name()).collect::<Vec<_>>(),
            "edges": spec.edges.len(),
            "flops": net.count_flops(),
        })
    );
    Ok(())
}

fn cmd_retrain(cfg: RunConfig, spec: Option<PathBuf>, init_from: Option<PathBuf>) -> Result<(), Failure> {
    cfg.validate().map_err(Failure::from)?;
    let dir = out_dir(&cfg)?;
    let spec = match spec {
        Some(p) => ArchitectureSpec::load(&p).map_err(Failure::artifact)?,
        None => ArchitectureSpec::baseline(cfg.network.clone()),
    };
    if spec.network != cfg.network {
        log::warn!("spec carries its own network config; it takes precedence over [network]");
    }
    let init = init_from.as_deref().map(load_checkpoint).transpose().map_err(Failure::artifact)?;
    let net = QNetwork::build_pruned_network(&spec, init.as_ref(), cfg.seed).map_err(Failure::artifact)?;
    let buffer = load_dataset(&cfg)?;
    let mut outputs = Outputs::in_dir(&dir)?;
    outputs.write_config(&cfg)?;
    let (net, eval) = match train(&cfg, net, &buffer, &mut outputs) {
        Ok(v) => v,
        Err(f) => {
            finish_failed(&outputs, "retrain", &f);
            return Err(f);
        }
    };
    save_checkpoint(net.params(), &outputs.claim("checkpoint.vnas"))?;
    spec.save(&outputs.claim("architecture.toml"))?;
    outputs.commit()?;
    outputs.write_metadata("retrain", json!("ok"))?;
    println!(
        "{}",
        json!({
            "command": "retrain",
            "out": dir,
            "steps": cfg.trainer.steps,
            "fresh_init": init.is_none(),
            "final_success": eval.success_rate,
            "ci95": eval.ci95,
            "flops": net.count_flops(),
        })
    );
    Ok(())
}

struct EvalTarget {
    checkpoint: Option<PathBuf>,
    spec: Option<PathBuf>,
    search: bool,
    expert: bool,
    noise: f64,
    random: bool,
}

fn cmd_eval(cfg: RunConfig, target: EvalTarget, episodes: Option<usize>) -> Result<(), Failure> {
    cfg.validate().map_err(Failure::from)?;
    let episodes = episodes.unwrap_or(cfg.trainer.eval_episodes);
    let (policy, result) = if target.expert {
        let noise = target.noise;
        ("expert", evaluate_with(|| ExpertPolicy { noise }, &cfg.env, episodes, cfg.seed)?)
    } else if target.random {
        ("random", evaluate_with(|| RandomPolicy, &cfg.env, episodes, cfg.seed)?)
    } else {
        let path = target.checkpoint.ok_or_else(|| Failure::Config("no checkpoint given".into()))?;
        let params = load_checkpoint(&path).map_err(Failure::artifact)?;
        let net = if let Some(spec) = target.spec {
            let spec = ArchitectureSpec::load(&spec).map_err(Failure::artifact)?;
            QNetwork::build_pruned_network(&spec, Some(&params), cfg.seed)
        } else {
            let mut net = if target.search {
                QNetwork::build_search_network(&cfg.network, cfg.seed)?
            } else {
                QNetwork::build_baseline_network(&cfg.network, cfg.seed)?
            };
            net.copy_params_from(&params).map(|_| net)
        }
        .map_err(Failure::artifact)?;
        ("network", evaluate_policy(&net, &cfg.env, &cfg.cem, episodes, cfg.seed)?)
    };
    println!(
        "{}",
        json!({
            "command": "eval",
            "policy": policy,
            "episodes": result.episodes,
            "successes": result.successes,
            "success_rate": result.success_rate,
            "ci95": result.ci95,
        })
    );
    Ok(())
}

fn cmd_export(spec: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let spec = ArchitectureSpec::load(spec).map_err(Failure::artifact)?;
    let listing = spec.render();
    match out {
        Some(p) => std::fs::write(&p, listing).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
        None => print!("{listing}"),
    }
    Ok(())
}

fn cmd_gradcheck(cfg: RunConfig, coords: usize) -> Result<(), Failure> {
    cfg.validate().map_err(Failure::from)?;
    let suite = SuiteConfig {
        seed: cfg.seed,
        coords_per_param: Some(coords),
        ..SuiteConfig::default()
    };
    let report = run_suite(&cfg.network, &suite)?;
    for c in &report.cases {
        let mark = if c.passed(report.tolerance) { "ok  " } else { "FAIL" };
        eprintln!(
            "{mark} {:<44} checked {:>4}  kinks {:>3}  max rel err {:.3e}",
            c.name, c.checked, c.skipped_kinks, c.max_rel_err
        );
    }
    println!(
        "{}",
        json!({
            "command": "gradcheck",
            "cases": report.cases.len(),
            "failures": report.failures().iter().map(|c| &c.name).collect::<Vec<_>>(),
            "max_rel_err": report.max_rel_err(),
            "tolerance": report.tolerance,
            "passed": report.passed(),
        })
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::GradCheck(format!("{} case(s) above tolerance", report.failures().len())))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::GenData { out } => cmd_gen_data(cfg, out),
        Command::Search(args) => {
            apply_train_args(&mut cfg, &args);
            cmd_search(cfg)
        }
        Command::Retrain {
            train,
            spec,
            baseline: _,
            init_from,
        } => {
            apply_train_args(&mut cfg, &train);
            cmd_retrain(cfg, spec, init_from)
        }
        Command::Eval {
            checkpoint,
            spec,
            search,
            expert,
            noise,
            random,
            eval_episodes,
        } => cmd_eval(
            cfg,
            EvalTarget {
                checkpoint,
                spec,
                search,
                expert,
                noise,
                random,
            },
            eval_episodes,
        ),
        Command::Export { spec, out } => cmd_export(&spec, out),
        Command::Gradcheck { coords } => cmd_gradcheck(cfg, coords),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VNAS_LOG_LEVEL", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
