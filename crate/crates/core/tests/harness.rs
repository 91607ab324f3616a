mod common;

use common::{cem_quadratic_errors, precise_cem, Quadratic};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vnas_core::qnet::{NetworkConfig, QNetwork};
use vnas_core::rl::tabular::TabularMdp;
use vnas_core::rl::{
    evaluate_policy, evaluate_with, generate_dataset, CemConfig, DatasetConfig, EnvConfig, ExpertPolicy,
    RandomPolicy, Trainer, TrainerConfig,
};

#[test]
fn random_policy_lands_in_the_low_band() {
    let r = evaluate_with(|| RandomPolicy, &EnvConfig::default(), 1000, 1).unwrap();
    assert!(r.success_rate > 0.0 && r.success_rate < 0.3, "{r:?}");
}

#[test]
fn noiseless_expert_is_near_perfect() {
    let r = evaluate_with(|| ExpertPolicy { noise: 0.0 }, &EnvConfig::default(), 500, 2).unwrap();
    assert!(r.success_rate > 0.95, "{r:?}");
}

#[test]
fn evaluation_is_seed_deterministic() {
    let env = EnvConfig::default();
    let a = evaluate_with(|| ExpertPolicy { noise: 0.3 }, &env, 200, 9).unwrap();
    let b = evaluate_with(|| ExpertPolicy { noise: 0.3 }, &env, 200, 9).unwrap();
    assert_eq!(a.successes, b.successes);
}

#[test]
fn random_weight_network_does_not_solve_the_task() {
    let net = QNetwork::build_baseline_network(&NetworkConfig::default(), 0).unwrap();
    let r = evaluate_policy(&net, &EnvConfig::default(), &CemConfig::default(), 100, 3).unwrap();
    assert!(r.success_rate < 0.3, "{r:?}");
}

#[test]
fn dataset_success_grows_with_expert_fraction() {
    let env = EnvConfig::default();
    let mut last = -1.0;
    for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let cfg = DatasetConfig {
            episodes: 200,
            expert_fraction: f,
            noise: 0.0,
        };
        let (_, stats) = generate_dataset(&env, &cfg, 5).unwrap();
        let rate = stats.success_rate();
        if f == 0.0 {
            assert!(rate < 0.3);
        }
        if f == 1.0 {
            assert!(rate > 0.95);
        }
        assert!(rate >= last, "fraction {f}: {rate} < {last}");
        last = rate;
    }
}

#[test]
fn dataset_hash_depends_only_on_seed() {
    let env = EnvConfig::default();
    let cfg = DatasetConfig {
        episodes: 40,
        ..DatasetConfig::default()
    };
    let (a, _) = generate_dataset(&env, &cfg, 8).unwrap();
    let (b, _) = generate_dataset(&env, &cfg, 8).unwrap();
    let (c, _) = generate_dataset(&env, &cfg, 9).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
}

#[test]
fn training_leaves_the_dataset_untouched() {
    let env = EnvConfig::default();
    let cfg = DatasetConfig {
        episodes: 20,
        ..DatasetConfig::default()
    };
    let (buffer, _) = generate_dataset(&env, &cfg, 1).unwrap();
    let before = buffer.content_hash();
    let net = QNetwork::build_search_network(&NetworkConfig::default(), 0).unwrap();
    let tc = TrainerConfig {
        batch_size: 4,
        target_update: 2,
        ..TrainerConfig::default()
    };
    let cem = CemConfig {
        population: 8,
        iterations: 1,
        ..CemConfig::default()
    };
    let mut trainer = Trainer::new(net, &buffer, &tc, &cem, 0).unwrap();
    for _ in 0..5 {
        trainer.step().unwrap();
    }
    assert_eq!(buffer.content_hash(), before);
}

#[test]
fn tabular_target_iteration_reaches_the_analytic_fixed_point() {
    let mdp = TabularMdp::default();
    let (q, iters) = mdp.iterate(1e-12, 10_000);
    assert!(iters < 10_000);
    let exact = mdp.analytic_q();
    for (a, b) in q.iter().flatten().zip(exact.iter().flatten()) {
        assert!((a - b).abs() < 1e-8, "{q:?} vs {exact:?}");
    }
}

#[test]
fn cem_recovers_quadratic_optima() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let qs: Vec<Quadratic> = (0..20).map(|_| Quadratic::random(&mut rng)).collect();
    let errs = cem_quadratic_errors(&qs, &precise_cem(), &mut rng);
    let worst = errs.iter().copied().fold(0.0, f64::max);
    assert!(worst < 0.05, "{errs:?}");
}
