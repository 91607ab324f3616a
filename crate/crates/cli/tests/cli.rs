use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vnas_core::fusion::MergeOpKind;
use vnas_core::qnet::{ArchitectureSpec, NetworkConfig};
use vnas_core::rl::ReplayBuffer;

fn vnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnas"))
        .args(args)
        .env("VNAS_LOG_LEVEL", "warn")
        .output()
        .expect("spawn vnas")
}

fn json_line(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).expect("stdout is a JSON line")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
seed = 3

[dataset]
episodes = 12

[trainer]
steps = 4
batch_size = 4
eval_every = 2
eval_episodes = 3
checkpoint_every = 2

[cem]
population = 8
iterations = 1
"#;

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path
}

fn gen_data(config: &Path, out: &Path) -> Value {
    let o = vnas(&["gen-data", "--config", s(config), "--out", s(out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    json_line(&o)
}

#[test]
fn gen_data_writes_a_deterministic_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a.vnbf"), dir.path().join("b.vnbf"));
    let summary = gen_data(&cfg, &a);
    gen_data(&cfg, &b);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(&bytes[..4], b"VNBF");
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(summary["episodes"], 12);
    assert!(summary["success_fraction"].as_f64().unwrap() > 0.0);
    let hash = ReplayBuffer::load(&a).unwrap().content_hash();
    assert_eq!(summary["sha256"].as_str().unwrap(), hash.iter().map(|b| format!("{b:02x}")).collect::<String>());
    assert!(dir.path().join("a.vnbf.run_config.toml").exists());
    assert!(dir.path().join("a.vnbf.meta.json").exists());
    assert!(!dir.path().join("a.vnbf.partial").exists());
}

#[test]
fn seed_flag_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a.vnbf"), dir.path().join("b.vnbf"));
    gen_data(&cfg, &a);
    let o = vnas(&["gen-data", "--config", s(&cfg), "--seed", "4", "--out", s(&b)]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn search_then_retrain_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("d.vnbf");
    gen_data(&cfg, &data);

    let run = dir.path().join("search");
    let o = vnas(&["search", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json_line(&o);
    assert_eq!(summary["steps"], 4);

    let mut rows = csv::Reader::from_path(run.join("metrics.csv")).unwrap();
    let header = rows.headers().unwrap().clone();
    assert_eq!(&header[0], "step");
    assert_eq!(&header[header.len() - 1], "edges_retained");
    assert_eq!(header.len(), 3 + 5 + 1);
    let steps: Vec<String> = rows.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(steps, ["2", "4"]);

    let spec = ArchitectureSpec::load(&run.join("architecture.toml")).unwrap();
    spec.validate().unwrap();
    for f in ["checkpoint.vnas", "run_config.toml", "metadata.json", "checkpoints/step_000002.vnas", "checkpoints/step_000004.vnas"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let leftovers: Vec<_> = walk(&run).into_iter().filter(|p| p.extension().is_some_and(|e| e == "partial")).collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");

    let eval = vnas(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&run.join("checkpoint.vnas")),
        "--search",
        "--eval-episodes",
        "2",
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert_eq!(json_line(&eval)["episodes"], 2);

    let re = dir.path().join("retrain");
    let o = vnas(&[
        "retrain",
        "--config",
        s(&cfg),
        "--dataset",
        s(&data),
        "--out",
        s(&re),
        "--spec",
        s(&run.join("architecture.toml")),
        "--init-from",
        s(&run.join("checkpoint.vnas")),
        "--steps",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json_line(&o);
    assert_eq!(summary["fresh_init"], false);
    assert!(summary["flops"].as_f64().unwrap() <= search_flops(&run));

    let eval = vnas(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&re.join("checkpoint.vnas")),
        "--spec",
        s(&re.join("architecture.toml")),
        "--eval-episodes",
        "2",
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
}

fn search_flops(run: &Path) -> f64 {
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(run.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "ok");
    let spec = ArchitectureSpec::load(&run.join("architecture.toml")).unwrap();
    vnas_core::qnet::QNetwork::build_search_network(&spec.network, 0).unwrap().count_flops()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn retrain_baseline_with_fresh_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("d.vnbf");
    gen_data(&cfg, &data);
    let out = dir.path().join("base");
    let o = vnas(&["retrain", "--config", s(&cfg), "--baseline", "--dataset", s(&data), "--out", s(&out), "--steps", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_line(&o)["fresh_init"], true);
    let spec = ArchitectureSpec::load(&out.join("architecture.toml")).unwrap();
    assert_eq!(spec, ArchitectureSpec::baseline(NetworkConfig::default()));
}

#[test]
fn expert_policy_succeeds() {
    let o = vnas(&["eval", "--expert", "--eval-episodes", "200"]);
    assert!(o.status.success());
    let v = json_line(&o);
    assert_eq!(v["policy"], "expert");
    assert!(v["success_rate"].as_f64().unwrap() > 0.95, "{v}");
    assert!(v["ci95"].as_f64().unwrap() >= 0.0);
}

#[test]
fn export_of_all_noop_spec_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ArchitectureSpec::baseline(NetworkConfig::default());
    for site in &mut spec.sites {
        site.merge = MergeOpKind::NoOp;
    }
    let path = dir.path().join("noop.toml");
    spec.save(&path).unwrap();
    let o = vnas(&["export", "--spec", s(&path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("architecture: 0 merges, 0 edges"), "{text}");
}

#[test]
fn gradcheck_passes_on_default_network() {
    let o = vnas(&["gradcheck", "--coords", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_line(&o);
    assert_eq!(v["passed"], true);
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn failure_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"zero\"\n").unwrap();
    assert_eq!(vnas(&["gen-data", "--config", s(&bad), "--out", s(&dir.path().join("x"))]).status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[trainer]\nsteps_typo = 3\n").unwrap();
    assert_eq!(vnas(&["eval", "--random", "--config", s(&unknown)]).status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    assert_eq!(vnas(&["eval", "--random", "--config", s(&missing)]).status.code(), Some(3));

    let cfg = small_config(dir.path());
    let o = vnas(&["search", "--config", s(&cfg), "--dataset", s(&dir.path().join("none.vnbf")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));

    let junk = dir.path().join("junk.vnas");
    std::fs::write(&junk, b"VNAS but not really").unwrap();
    assert_eq!(vnas(&["eval", "--checkpoint", s(&junk)]).status.code(), Some(5));

    let help = vnas(&["--help"]);
    let text = String::from_utf8(help.stdout).unwrap();
    assert!(text.contains("Exit codes:") && text.contains("4  non-finite training loss"));
}

#[test]
fn non_finite_loss_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("explode.toml");
    std::fs::write(
        &cfg,
        SMALL.replace("batch_size = 4", "batch_size = 4\nlearning_rate = 1e300\nmomentum = 0.0"),
    )
    .unwrap();
    let data = dir.path().join("d.vnbf");
    gen_data(&cfg, &data);
    let run = dir.path().join("run");
    let o = vnas(&["retrain", "--baseline", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("metrics.csv.partial").exists());
    assert!(!run.join("checkpoint.vnas").exists());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(run.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["status"]["exit_code"], 4);
}
