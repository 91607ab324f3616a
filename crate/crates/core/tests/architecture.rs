use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnas_core::attention::flop_overhead;
use vnas_core::fusion::{merge_evaluations, FusionSupernet, MergeOpKind};
use vnas_core::params::ParamStore;
use vnas_core::qnet::{
    decode_checkpoint, encode_checkpoint, random_logits, ArchitectureSpec, NetworkConfig, QNetwork,
};
use vnas_core::tensor::{Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn batch(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Tensor) {
    (
        Tensor::from_fn(&[n, 32, 32, 3], |_| rng.gen()),
        random(rng, &[n, 9]),
    )
}

#[test]
fn saturated_mixture_equals_each_single_merge() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let site = FusionSupernet::new(2, 4, 4, 6, 9);
    let mut store = ParamStore::new();
    site.init_params(&mut store, &mut rng, &MergeOpKind::ALL, true);
    let (x, a) = (random(&mut rng, &[3, 4, 4, 6]), random(&mut rng, &[3, 9]));
    for kind in MergeOpKind::ALL {
        let mut logits = vec![0.0; 5];
        logits[kind.index()] = 1e4;
        store.insert(site.mix_logits_name(), Tensor::vector(&logits));
        let mut tape = Tape::no_grad();
        let p = store.bind(&mut tape);
        let (xv, av) = (tape.constant(x.clone()), tape.constant(a.clone()));
        let mixed = site.fuse(&mut tape, &p, xv, av).unwrap();
        let single = site.merge(&mut tape, &p, kind, xv, av).unwrap();
        let diff = tape.value(mixed).max_abs_diff(tape.value(single));
        assert!(diff < 1e-9, "{kind}: {diff}");
    }
}

#[test]
fn supernet_evaluates_every_candidate_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let site = FusionSupernet::new(1, 2, 2, 3, 4);
    let mut store = ParamStore::new();
    site.init_params(&mut store, &mut rng, &MergeOpKind::ALL, true);
    let mut tape = Tape::no_grad();
    let p = store.bind(&mut tape);
    let x = tape.constant(random(&mut rng, &[1, 2, 2, 3]));
    let a = tape.constant(random(&mut rng, &[1, 4]));
    site.fuse(&mut tape, &p, x, a).unwrap();
    assert_eq!(merge_evaluations(&tape), 5);
    for kind in MergeOpKind::ALL {
        assert_eq!(tape.counter(&format!("merge.{kind}")), 1);
    }
}

#[test]
fn pruned_network_matches_hardened_search_network() {
    let cfg = NetworkConfig::default();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut search = QNetwork::build_search_network(&cfg, seed).unwrap();
        random_logits(&mut search, &mut rng, 2.0);
        let spec = search.extract_architecture(seed, 0).unwrap();
        let hardened = search.hardened().unwrap();
        let pruned = QNetwork::build_pruned_network(&spec, Some(search.params()), seed).unwrap();
        for _ in 0..34 {
            let (images, actions) = batch(&mut rng, 2);
            let a = hardened.q_values(&images, &actions).unwrap();
            let b = pruned.q_values(&images, &actions).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-6, "seed {seed}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn flop_counts_are_ordered() {
    let cfg = NetworkConfig::default();
    let search = QNetwork::build_search_network(&cfg, 0).unwrap();
    let baseline = QNetwork::build_baseline_network(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let mut net = search.clone();
        random_logits(&mut net, &mut rng, 2.0);
        let pruned = QNetwork::build_pruned_network(&net.extract_architecture(0, 0).unwrap(), None, 0).unwrap();
        assert!(search.count_flops() >= pruned.count_flops());
        let rel = (pruned.count_flops() - baseline.count_flops()).abs() / baseline.count_flops();
        assert!(rel < 0.02, "pruned vs baseline {rel}");
        assert!(pruned.attention_overhead() < 0.01);
    }
    for s in search.sites() {
        if let Some(a) = &s.attention {
            assert!(flop_overhead(a, search.count_flops()) < 0.01);
        }
    }
}

#[test]
fn spec_and_checkpoint_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = QNetwork::build_search_network(&NetworkConfig::default(), 4).unwrap();
    random_logits(&mut net, &mut ChaCha8Rng::seed_from_u64(4), 2.0);
    let spec = net.extract_architecture(4, 123).unwrap();
    let (p1, p2) = (dir.path().join("a.toml"), dir.path().join("b.toml"));
    spec.save(&p1).unwrap();
    ArchitectureSpec::load(&p1).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    let bytes = encode_checkpoint(net.params());
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(&back, net.params());
    assert_eq!(encode_checkpoint(&back), bytes);
}

#[test]
fn baseline_spec_is_a_single_add_site() {
    let cfg = NetworkConfig::default();
    let spec = ArchitectureSpec::baseline(cfg.clone());
    let merges: Vec<_> = spec.sites.iter().filter(|s| s.merge != MergeOpKind::NoOp).collect();
    assert_eq!(merges.len(), 1);
    assert_eq!(merges[0].merge, MergeOpKind::Add);
    assert_eq!(merges[0].index, cfg.baseline_site);
    assert!(spec.edges.is_empty());
}
