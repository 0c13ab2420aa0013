use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::search_space::{decode, enumerate, random_arch};

fn toy_edges() -> BucketEdges {
    BucketEdges::log_spaced(0.1, 100.0, 8).unwrap()
}

fn toy_uniform(seed: u64) -> ControllerParams {
    TrainerConfig::default().init_params(&SpaceConfig::toy(), seed)
}

fn toy_random(seed: u64) -> ControllerParams {
    let space = SpaceConfig::toy();
    ControllerParams::random(&space, TrainerConfig::default().shape(&space), seed, 0.5)
}

fn tiny_space() -> SpaceConfig {
    SpaceConfig {
        n_units: 1,
        depth_choices: vec![1, 2],
        kernel_choices: vec![3, 5],
        expansion_choices: vec![3, 6],
        input_resolution: 32,
        stem_channels: 8,
        unit_out_channels: vec![16],
        unit_strides: vec![2],
    }
}

fn tiny_sizes() -> NetworkSizes {
    NetworkSizes {
        encoder_hidden: 3,
        encoder_out: 3,
        n_buckets: 3,
        bucket_dim: 2,
        token_dim: 2,
        hidden: 4,
    }
}

#[test]
fn reward_examples() {
    assert_eq!(reward(0.7, 0.7, 250.0, 250.0, 1e-3, 0.4).unwrap(), 0.0);
    let r = reward(0.8, 0.7, 300.0, 200.0, 2.5e-4, 0.5).unwrap();
    assert!((r - 0.05).abs() < 1e-12, "{r}");
    assert!(matches!(
        reward(0.8, 0.7, 300.0, 200.0, 1.0, 0.0),
        Err(Error::DivisionByZeroShift)
    ));
    assert!(reward(0.8, 0.7, 300.0, 200.0, -1.0, 1.0).is_err());
    let mut last = f64::NEG_INFINITY;
    for d in [0.01, 0.1, 1.0, 10.0] {
        let r = reward(0.8, 0.7, 300.0, 200.0, 1e-3, d).unwrap();
        assert!(r > last);
        last = r;
    }
    assert_eq!(reward(0.9, 0.6, 400.0, 100.0, 0.0, 3.0).unwrap(), 0.9 - 0.6);
}

#[test]
fn buckets_clamp_at_both_ends() {
    let e = toy_edges();
    assert_eq!(e.n_buckets(), 8);
    assert_eq!(e.edges().len(), 7);
    assert!((e.edges()[0] - 0.1).abs() < 1e-12 && (e.edges()[6] - 100.0).abs() < 1e-9);
    assert_eq!(e.bucket(0.0), 0);
    assert_eq!(e.bucket(0.05), 0);
    assert_eq!(e.bucket(1e9), 7);
    let mut prev = 0;
    for i in 0..200 {
        let b = e.bucket(1e-3 * 1.1f64.powi(i));
        assert!(b >= prev);
        prev = b;
    }
    assert!(BucketEdges::new(vec![1.0, 0.5]).is_err());
}

#[test]
fn same_bucket_gives_identical_state() {
    let p = toy_random(1);
    let a = SpaceConfig::toy().min_arch();
    let e = toy_edges();
    assert_eq!(e.bucket(2.0), e.bucket(2.1));
    let s1 = embed_state(&p, &a, 2.0, &e).unwrap();
    let s2 = embed_state(&p, &a, 2.1, &e).unwrap();
    assert_eq!(s1, s2);
    let s3 = embed_state(&p, &a, 50.0, &e).unwrap();
    assert_ne!(s1.vector(), s3.vector());
    assert_eq!(s1.vector().len(), 32 + 16);
}

#[test]
fn onehot_encoding_is_injective_on_toy_space() {
    let space = SpaceConfig::toy();
    let p = toy_uniform(0);
    let e = toy_edges();
    let mut seen = HashMap::new();
    for a in enumerate(&space, 1000).unwrap() {
        let x = state_input(&p, &a, 1.0, &e).unwrap().onehot();
        assert_eq!(x.iter().sum::<f64>(), (2 * (1 + 2 * 3)) as f64);
        let bits: Vec<bool> = x.iter().map(|v| *v == 1.0).collect();
        assert!(seen.insert(bits, a).is_none());
    }
    assert_eq!(seen.len(), 144);
}

#[test]
fn uniform_params_give_uniform_decisions_and_minimal_greedy() {
    let space = SpaceConfig::toy();
    let p = toy_uniform(3);
    let s = embed_state(&p, &space.max_arch(), 3.0, &toy_edges()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let t = sample(&p, &s, &mut rng).unwrap();
        for d in &t.decisions {
            let n = match d.kind {
                DecisionKind::Depth => 2.0,
                DecisionKind::Kernel => 2.0,
                DecisionKind::Expansion => 1.0,
            };
            assert!((d.log_prob + f64::ln(n)).abs() < 1e-12);
        }
    }
    let g = greedy_decode(&p, &s).unwrap();
    assert_eq!(g, space.min_arch());
    assert_eq!(greedy_decode(&p, &s).unwrap(), g);
}

#[test]
fn uniform_token_frequencies_within_four_sigma() {
    let space = SpaceConfig::toy();
    let p = toy_uniform(5);
    let s = embed_state(&p, &space.min_arch(), 1.0, &toy_edges()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // (kind, unit, layer) -> (visits, counts per choice)
    let mut tally: HashMap<(DecisionKind, usize, usize), (u64, [u64; 2])> = HashMap::new();
    for _ in 0..100_000 {
        let t = sample(&p, &s, &mut rng).unwrap();
        for d in &t.decisions {
            let e = tally.entry((d.kind, d.unit, d.layer)).or_default();
            e.0 += 1;
            e.1[d.choice] += 1;
        }
    }
    for ((kind, _, _), (n, counts)) in &tally {
        let k = if *kind == DecisionKind::Expansion { 1.0 } else { 2.0 };
        let p = 1.0 / k;
        let sigma = (*n as f64 * p * (1.0 - p)).sqrt();
        for c in counts.iter().take(k as usize) {
            assert!((*c as f64 - *n as f64 * p).abs() <= 4.0 * sigma + 1e-9);
        }
    }
}

#[test]
fn sampled_trajectories_are_valid_and_consistent() {
    let space = SpaceConfig::toy();
    let p = toy_random(8);
    let s = embed_state(&p, &space.min_arch(), 0.3, &toy_edges()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let t = sample(&p, &s, &mut rng).unwrap();
        assert_eq!(decode(&t.arch.encode(), &space).unwrap(), t.arch);
        let sum: f64 = t.decisions.iter().map(|d| d.log_prob).sum();
        assert_eq!(sum, t.total_log_prob);
        let prob = t.total_log_prob.exp();
        assert!(prob > 0.0 && prob <= 1.0);
        let layers: usize = t.arch.units.iter().map(|u| u.layers.len()).sum();
        assert_eq!(t.decisions.len(), space.n_units + 2 * layers);
        let again = score(&p, &s, &t.arch).unwrap();
        assert_eq!(again.total_log_prob, t.total_log_prob);
    }
}

#[test]
fn probabilities_sum_to_one_over_toy_space() {
    let space = SpaceConfig::toy();
    let all = enumerate(&space, 1000).unwrap();
    for seed in 0..5 {
        for p in [toy_uniform(seed), toy_random(seed)] {
            let prev = random_arch(&space, seed);
            let s = embed_state(&p, &prev, 0.2 + seed as f64, &toy_edges()).unwrap();
            let total: f64 = all
                .iter()
                .map(|a| score(&p, &s, a).unwrap().total_log_prob.exp())
                .sum();
            assert!((total - 1.0).abs() <= 1e-9, "seed {seed}: {total}");
        }
    }
}

/// Analytic gradient against central differences with step 1e-5 on every
/// parameter. Relative error uses a 1e-6 floor in the denominator so that
/// parameters with a vanishing gradient are compared absolutely.
fn max_gradient_error(seed: u64) -> f64 {
    let space = tiny_space();
    let shape = ControllerShape::new(&space, tiny_sizes());
    let mut p = ControllerParams::random(&space, shape, seed, 0.5);
    let edges = BucketEdges::new(vec![0.5, 2.0]).unwrap();
    let prev = decode("k5e3", &space).unwrap();
    let input = state_input(&p, &prev, 1.0, &edges).unwrap();
    let target = decode("k3e6,k5e3", &space).unwrap();
    let choices = arch_choices(&target, &space).unwrap();
    let (adv, ent, wd) = (0.7, 0.3, 0.01);

    let g = objective_gradient(&p, &input, &choices, adv, ent, wd).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p.as_slice()[i];
        p.as_mut_slice()[i] = orig + h;
        let up = objective(&p, &input, &choices, adv, ent, wd).unwrap();
        p.as_mut_slice()[i] = orig - h;
        let down = objective(&p, &input, &choices, adv, ent, wd).unwrap();
        p.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = g.as_slice()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = max_gradient_error(seed);
        assert!(e <= 1e-4, "seed {seed}: worst relative error {e}");
    }
}

#[test]
fn every_tensor_receives_gradient() {
    let space = tiny_space();
    let shape = ControllerShape::new(&space, tiny_sizes());
    let p = ControllerParams::random(&space, shape, 4, 0.5);
    let edges = BucketEdges::new(vec![0.5, 2.0]).unwrap();
    let input = state_input(&p, &decode("k5e3", &space).unwrap(), 1.0, &edges).unwrap();
    let choices = arch_choices(&decode("k3e6,k5e3", &space).unwrap(), &space).unwrap();
    let g = objective_gradient(&p, &input, &choices, 1.0, 0.0, 0.0).unwrap();
    for t in Tensor::ALL {
        assert!(g.get(t).iter().any(|v| *v != 0.0), "{t:?}");
    }
}

fn one_sample(p: &ControllerParams, input: &StateInput, seed: u64) -> Trajectory {
    let s = encode_input(p, input);
    sample(p, &s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn zero_advantage_leaves_params_unchanged() {
    let space = SpaceConfig::toy();
    let mut p = toy_random(2);
    let before = p.clone();
    let input = state_input(&p, &space.min_arch(), 1.0, &toy_edges()).unwrap();
    let t = one_sample(&p, &input, 0);
    let cfg = TrainerConfig {
        entropy_weight: 0.0,
        weight_decay: 0.0,
        ..TrainerConfig::default()
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, p.len());
    let mut b = Baseline {
        value: 0.37,
        decay: 0.9,
        enabled: true,
    };
    reinforce_step(&mut p, &input, &[(t, 0.37)], &cfg, &mut opt, &mut b).unwrap();
    assert_eq!(p, before);
    assert!((b.value - 0.37).abs() < 1e-15);
}

#[test]
fn plain_sgd_step_is_lr_times_reward_times_score() {
    let space = SpaceConfig::toy();
    let mut p = toy_random(6);
    let before = p.clone();
    let input = state_input(&p, &space.min_arch(), 1.0, &toy_edges()).unwrap();
    let t = one_sample(&p, &input, 1);
    let cfg = TrainerConfig {
        entropy_weight: 0.0,
        weight_decay: 0.0,
        use_baseline: false,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.01,
        ..TrainerConfig::default()
    };
    let r = 0.42;
    let score_grad = objective_gradient(&before, &input, &t.choices(), 1.0, 0.0, 0.0).unwrap();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, p.len());
    let mut b = Baseline::new(&cfg);
    reinforce_step(&mut p, &input, &[(t, r)], &cfg, &mut opt, &mut b).unwrap();
    for ((new, old), g) in p.as_slice().iter().zip(before.as_slice()).zip(score_grad.as_slice()) {
        let expected = 0.01 * r * g;
        assert!((new - old - expected).abs() <= 1e-15 + 1e-9 * expected.abs());
    }
}

#[test]
fn greedy_is_invariant_to_head_offsets() {
    let space = SpaceConfig::toy();
    for seed in 0..10 {
        let p = toy_random(seed);
        let s = embed_state(&p, &space.max_arch(), 1.0, &toy_edges()).unwrap();
        let base = greedy_decode(&p, &s).unwrap();
        for head in [Tensor::DepthB, Tensor::KernelB, Tensor::ExpansionB] {
            let mut q = p.clone();
            q.get_mut(head).iter_mut().for_each(|b| *b += 3.25);
            assert_eq!(greedy_decode(&q, &s).unwrap(), base);
        }
    }
}

#[test]
fn buckets_condition_the_policy_after_training() {
    let space = SpaceConfig::toy();
    let mut p = toy_uniform(4);
    let edges = toy_edges();
    let prev = space.min_arch();
    let probe = decode("k5e3,k5e3,k5e3;k3e3,k3e3", &space).unwrap();
    let lp = |p: &ControllerParams, d: f64| {
        let s = embed_state(p, &prev, d, &edges).unwrap();
        score(p, &s, &probe).unwrap().total_log_prob
    };
    assert_eq!(lp(&p, 0.05), lp(&p, 500.0));

    let cfg = TrainerConfig::default();
    let input = state_input(&p, &prev, 0.05, &edges).unwrap();
    let mut opt = Optimizer::new(cfg.optimizer, 0.05, p.len());
    let mut b = Baseline::new(&cfg);
    for (i, r) in [1.0, -0.5, 0.8].into_iter().enumerate() {
        let t = one_sample(&p, &input, i as u64);
        reinforce_step(&mut p, &input, &[(t, r)], &cfg, &mut opt, &mut b).unwrap();
    }
    assert!((lp(&p, 0.05) - lp(&p, 500.0)).abs() > 1e-6);
}

fn toy_meta() -> SnapshotMeta {
    SnapshotMeta {
        t: 2,
        n_classes: 1,
        n_samples: 100,
        volume_fraction: 1.0,
        max_classes: 2,
    }
}

#[test]
fn single_iteration_trains_once_and_is_deterministic() {
    use crate::evaluator::{Surrogate, SurrogateConfig};
    let space = SpaceConfig::toy();
    let ev = Surrogate::new(space.clone(), SurrogateConfig::default()).unwrap();
    let cfg = TrainerConfig {
        iterations: 1,
        seed: 3,
        ..TrainerConfig::default()
    };
    let start = cfg.init_params(&space, 1);
    let mut a = start.clone();
    let trace = train(&mut a, &space.min_arch(), 1.0, &toy_meta(), &ev, &space, &cfg, &toy_edges()).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace[0].iteration, 1);
    assert_ne!(a, start);

    let cfg = TrainerConfig {
        iterations: 50,
        ..cfg
    };
    let mut b = start.clone();
    let mut c = start.clone();
    let tb = train(&mut b, &space.min_arch(), 1.0, &toy_meta(), &ev, &space, &cfg, &toy_edges()).unwrap();
    let tc = train(&mut c, &space.min_arch(), 1.0, &toy_meta(), &ev, &space, &cfg, &toy_edges()).unwrap();
    assert_eq!(tb, tc);
    assert_eq!(b, c);
    assert!(trace_csv_string(&tb).starts_with("iteration,reward,entropy,madds\n1,"));
}

#[test]
fn train_rejects_zero_shift_and_foreign_space() {
    use crate::evaluator::{Surrogate, SurrogateConfig};
    let space = SpaceConfig::toy();
    let ev = Surrogate::new(space.clone(), SurrogateConfig::default()).unwrap();
    let cfg = TrainerConfig {
        iterations: 2,
        ..TrainerConfig::default()
    };
    let mut p = cfg.init_params(&space, 0);
    assert!(matches!(
        train(&mut p, &space.min_arch(), 0.0, &toy_meta(), &ev, &space, &cfg, &toy_edges()),
        Err(Error::DivisionByZeroShift)
    ));
    let other = SpaceConfig::default();
    assert!(train(&mut p, &space.min_arch(), 1.0, &toy_meta(), &ev, &other, &cfg, &toy_edges()).is_err());
}

#[test]
fn entropy_weight_anneals_linearly() {
    let cfg = TrainerConfig {
        entropy_weight: 0.2,
        entropy_anneal: 0.5,
        iterations: 100,
        ..TrainerConfig::default()
    };
    assert_eq!(cfg.entropy_weight_at(1), 0.2);
    assert!((cfg.entropy_weight_at(26) - 0.1).abs() < 1e-12);
    assert_eq!(cfg.entropy_weight_at(51), 0.0);
    assert_eq!(cfg.entropy_weight_at(100), 0.0);
    let flat = TrainerConfig { entropy_anneal: 0.0, ..cfg };
    assert_eq!(flat.entropy_weight_at(100), 0.2);
    assert!(TrainerConfig { entropy_anneal: 1.5, ..TrainerConfig::default() }.validate().is_err());
}
