use archft::archspace::ActionVector;
use archft::controller::{
    compute_returns, relative_total_reward, reward_from_accuracy, Controller, ControllerConfig, ControllerPolicy,
    EpisodeMode,
};
use archft::numkernel::Rng;

fn small_config() -> ControllerConfig {
    ControllerConfig {
        embed: 4,
        hidden: 5,
        layers: 2,
        ..ControllerConfig::default()
    }
}

#[test]
fn objective_gradient_matches_central_differences() {
    for (seed, per_site, entropy) in [(1, false, 0.0), (2, true, 0.0), (3, false, 0.3)] {
        let cfg = ControllerConfig {
            per_site,
            entropy_weight: entropy,
            temperature: 0.7,
            ..small_config()
        };
        let mut policy = ControllerPolicy::new(vec![2, 2], cfg, seed).unwrap();
        policy.randomize_classifier(seed + 100);
        let actions = ActionVector(vec![1, 0]);
        let adv = [0.37, -1.2];
        let analytic = policy.objective_gradient(&actions, &adv).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (path, grad) in &analytic {
            let id = policy.store().id(path).unwrap();
            for i in 0..grad.len() {
                let orig = policy.store().get(id).value.data()[i];
                policy.store_mut().get_mut(id).value.data_mut()[i] = orig + h;
                let up = policy.objective(&actions, &adv).unwrap();
                policy.store_mut().get_mut(id).value.data_mut()[i] = orig - h;
                let down = policy.objective(&actions, &adv).unwrap();
                policy.store_mut().get_mut(id).value.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = grad.data()[i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(err);
                assert!(err <= 1e-6, "{path}[{i}]: analytic {a} numeric {numeric}");
            }
        }
        assert!(worst <= 1e-6);
    }
}

#[test]
fn zero_advantage_leaves_policy_bit_identical() {
    let mut c = Controller::new(vec![2; 4], ControllerConfig::default(), 7).unwrap();
    let mut rng = Rng::new(1);
    // move off the initial point first so Adam has non-zero moments
    for _ in 0..3 {
        let t = c.sample(&mut rng);
        c.update(&t, 0.8).unwrap();
    }
    let before = c.policy.store().checksum();
    let t = c.sample(&mut rng);
    let b = c.baseline.value;
    let report = c.update(&t, b).unwrap();
    assert_eq!(report.advantage, 0.0);
    assert!(!report.stepped);
    assert_eq!(before, c.policy.store().checksum());
}

#[test]
fn two_armed_bandit_converges_in_every_seed() {
    let mut reached = Vec::new();
    for seed in 0..10 {
        let mut c = Controller::new(vec![2], ControllerConfig::default(), seed).unwrap();
        let mut rng = Rng::new(1000 + seed);
        let mut hit = None;
        for u in 1..=300 {
            let t = c.sample(&mut rng);
            let reward = if t.actions.0[0] == 1 { 1.0 } else { 0.0 };
            c.update(&t, reward).unwrap();
            if c.greedy().distributions[0][1] >= 0.95 {
                hit = Some(u);
                break;
            }
        }
        reached.push(hit);
    }
    assert!(reached.iter().all(Option::is_some), "{reached:?}");
}

#[test]
fn untrained_policy_samples_uniformly() {
    let policy = ControllerPolicy::new(vec![2; 4], ControllerConfig::default(), 3).unwrap();
    let mut rng = Rng::new(4);
    let n = 10_000;
    let mut ones = [0usize; 4];
    for _ in 0..n {
        let t = policy.sample_episode(&mut rng);
        for (o, &a) in ones.iter_mut().zip(&t.actions.0) {
            *o += a;
        }
        for d in &t.distributions {
            assert_eq!(d, &vec![0.5, 0.5]);
        }
    }
    for o in ones {
        let p = o as f64 / n as f64;
        assert!((0.47..=0.53).contains(&p), "{p}");
    }
    assert_eq!(policy.greedy_episode().actions, ActionVector::zeros(4));
}

#[test]
fn distributions_normalize_and_log_probs_match() {
    let mut policy = ControllerPolicy::new(vec![2, 3, 2, 5], small_config(), 9).unwrap();
    policy.randomize_classifier(10);
    let mut rng = Rng::new(11);
    for _ in 0..50 {
        let t = policy.sample_episode(&mut rng);
        assert_eq!(t.mode, EpisodeMode::Sampled);
        let mut product = 1.0;
        for ((d, &a), &n) in t.distributions.iter().zip(&t.actions.0).zip(policy.candidates()) {
            assert_eq!(d.len(), n);
            assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            product *= d[a];
        }
        assert!(t.log_probs.iter().all(|&l| l <= 0.0));
        assert!((t.log_probs.iter().sum::<f64>().exp() - product).abs() <= 1e-12);
    }
}

#[test]
fn cold_temperature_sampling_equals_greedy() {
    for seed in 0..5 {
        let cfg = ControllerConfig {
            temperature: 1e-9,
            ..ControllerConfig::default()
        };
        let mut policy = ControllerPolicy::new(vec![2; 6], cfg, seed).unwrap();
        policy.randomize_classifier(seed);
        let mut rng = Rng::new(seed);
        assert_eq!(policy.sample_episode(&mut rng).actions, policy.greedy_episode().actions);
    }
}

#[test]
fn greedy_ignores_temperature() {
    let greedy = |temperature: f64| {
        let cfg = ControllerConfig {
            temperature,
            ..ControllerConfig::default()
        };
        let mut p = ControllerPolicy::new(vec![2; 8], cfg, 21).unwrap();
        p.randomize_classifier(22);
        p.greedy_episode().actions
    };
    let reference = greedy(1.0);
    for t in [0.05, 0.5, 3.0, 40.0] {
        assert_eq!(greedy(t), reference);
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let run = || {
        let mut c = Controller::new(vec![2; 4], ControllerConfig::default(), 5).unwrap();
        let mut rng = Rng::new(6);
        let mut seen = Vec::new();
        for i in 0..20 {
            let t = c.sample(&mut rng);
            c.update(&t, (i % 3) as f64 / 2.0).unwrap();
            seen.push(t.actions);
        }
        (seen, c.policy.store().checksum())
    };
    assert_eq!(run(), run());
}

#[test]
fn greedy_trajectories_are_rejected() {
    let mut c = Controller::new(vec![2; 3], ControllerConfig::default(), 1).unwrap();
    let g = c.greedy();
    assert!(c.update(&g, 1.0).is_err());
}

#[test]
fn baseline_moves_after_the_step() {
    let mut c = Controller::new(vec![2; 2], ControllerConfig::default(), 1).unwrap();
    let t = c.sample(&mut Rng::new(2));
    let r = c.update(&t, 0.6).unwrap();
    assert_eq!(r.baseline, 0.0);
    assert_eq!(r.advantage, 0.6);
    assert!((c.baseline.value - 0.05 * 0.6).abs() < 1e-15);
}

#[test]
fn returns_follow_terminal_reward_convention() {
    assert_eq!(compute_returns(0.8, 4, 1.0).unwrap(), vec![0.8; 4]);
    assert_eq!(compute_returns(1.0, 2, 0.5).unwrap(), vec![0.5, 1.0]);
    assert_eq!(compute_returns(0.0, 3, 0.9).unwrap(), vec![0.0; 3]);
    // direct sum of gamma^(j-i) r_j with r zero except at K
    let (k, g, r): (usize, f64, f64) = (5, 0.7, 0.3);
    let direct: Vec<f64> = (1..=k)
        .map(|i| (i..=k).map(|j| g.powi((j - i) as i32) * if j == k { r } else { 0.0 }).sum())
        .collect();
    assert_eq!(compute_returns(r, k, g).unwrap(), direct);
    assert!(compute_returns(1.0, 2, 0.0).is_err());
    assert!(compute_returns(1.0, 2, 1.5).is_err());
}

#[test]
fn reward_is_accuracy() {
    assert_eq!(reward_from_accuracy(0.5).unwrap(), 0.5);
    assert!(reward_from_accuracy(0.7).unwrap() > reward_from_accuracy(0.6).unwrap());
    assert!(reward_from_accuracy(1.2).is_err());
    assert_eq!(relative_total_reward(&[0.5, 0.5, 0.5]), vec![0.0, 0.5, 1.0]);
    assert_eq!(relative_total_reward(&[0.0, 0.0]), vec![0.0, 0.0]);
}

#[test]
fn checkpoint_restores_policy() {
    let mut c = Controller::new(vec![2; 3], ControllerConfig::default(), 1).unwrap();
    let ckpt = c.policy.checkpoint();
    let initial = c.policy.store().checksum();
    let t = c.sample(&mut Rng::new(3));
    c.update(&t, 1.0).unwrap();
    let mut rolled_back = c.policy.clone();
    rolled_back.restore(&ckpt).unwrap();
    assert_eq!(rolled_back.store().checksum(), initial);
    let mut fresh = ControllerPolicy::new(vec![2; 3], ControllerConfig::default(), 99).unwrap();
    fresh.restore(&c.policy.checkpoint()).unwrap();
    assert_eq!(fresh.store().checksum(), c.policy.store().checksum());
}
