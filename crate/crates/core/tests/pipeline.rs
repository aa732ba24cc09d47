use archft::archspace::ActionVector;
use archft::earlystop::{StopDecision, StopReason};
use archft::numkernel::Optimizer;
use archft::pipeline::data::{generate_splits, Task};
use archft::pipeline::{
    cost_metrics, finetune, finetune_saving, pretrain_source, stage1_search, stage2_finetune, vanilla_finetune,
    DataSpec, InScopeInit, RewardOracle, Run, RunConfig, TabularLandscape,
};
use archft::supernet::{Init, Network, Supernet};

fn tiny() -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_overrides(&[
        "train_size=128",
        "val_size=64",
        "test_size=64",
        "batch_size=32",
        "pretrain_epochs=1",
        "budget=12",
        "window=5",
        "finetune_epochs=1",
        "eval_every=2",
    ])
    .unwrap();
    c
}

#[test]
fn search_saving_arithmetic() {
    let d = StopDecision {
        stopped: true,
        stop_round: 140,
        a_star: ActionVector::zeros(8),
        reason: StopReason::Stable,
    };
    let m = cost_metrics(&d, 180, &[(0, 0.5)], &[(0, 0.5)]);
    assert!((m.search_saving - 40.0 / 180.0).abs() < 1e-15);
    assert_eq!(format!("{:.1}%", 100.0 * m.search_saving), "22.2%");
    assert_eq!(m.finetune.unwrap().saving, 0.0);
    let exhausted = StopDecision {
        reason: StopReason::BudgetExhausted,
        stop_round: 180,
        ..d
    };
    assert_eq!(exhausted.search_saving(180), 0.0);
}

#[test]
fn matched_accuracy_saving() {
    let searched = [(0, 0.10), (23_000, 0.70), (46_000, 0.85), (60_000, 0.86)];
    let vanilla = [(0, 0.10), (34_000, 0.70), (68_000, 0.85)];
    let m = finetune_saving(&searched, &vanilla).unwrap();
    assert_eq!(m.level, 0.85);
    assert_eq!((m.iters_searched, m.iters_vanilla), (46_000, 68_000));
    assert!((m.saving - (1.0 - 46.0 / 68.0)).abs() < 1e-15);
    assert_eq!(format!("{:.2}%", 100.0 * m.saving), "32.35%");

    let same = [(0, 0.2), (10, 0.6), (20, 0.7)];
    assert_eq!(finetune_saving(&same, &same).unwrap().saving, 0.0);
    // slower searched model gives a negative saving
    let slow = [(0, 0.2), (30, 0.7)];
    assert!(finetune_saving(&slow, &same).unwrap().saving < 0.0);
    assert!(finetune_saving(&[], &same).is_none());
}

#[test]
fn tabular_landscape_has_a_unique_planted_optimum() {
    for seed in 0..20 {
        let t = TabularLandscape::generate(4, seed).unwrap();
        let all: Vec<(ActionVector, f64)> = (0..16usize)
            .map(|i| {
                let v = ActionVector((0..4).map(|s| (i >> (3 - s)) & 1).collect());
                let r = t.reward(&v).unwrap();
                (v, r)
            })
            .collect();
        let best = all.iter().cloned().fold((ActionVector::zeros(4), f64::MIN), |b, x| if x.1 > b.1 { x } else { b });
        let runner_up = all.iter().filter(|x| x.0 != best.0).map(|x| x.1).fold(f64::MIN, f64::max);
        assert_eq!(t.optimum(), best.0);
        assert!(best.1 - runner_up >= 0.2);
        assert!((t.margin() - (best.1 - runner_up)).abs() < 1e-15);
        assert!(all.iter().all(|x| (0.0..=1.0).contains(&x.1)));
    }
    assert!(TabularLandscape::generate(13, 0).is_err());
}

#[test]
fn oracle_search_recovers_optimum_without_a_supernet() {
    let mut cfg = RunConfig {
        oracle: true,
        ..RunConfig::default()
    };
    let spec = Run::new(cfg.clone(), "unused").space().unwrap();
    for seed in [3, 4] {
        cfg.seed = seed;
        let t = TabularLandscape::generate(spec.num_sites(), seed).unwrap();
        let out = stage1_search(&cfg, &spec, RewardOracle::Tabular(&t)).unwrap();
        assert!(out.supernet.is_none());
        assert_eq!(out.minibatches, 0);
        assert_eq!(out.decision.reason, StopReason::Stable);
        assert_eq!(out.decision.a_star, t.optimum());
        assert_eq!(out.rounds.len(), out.history.rows().len());
        assert_eq!(out.rounds.len(), out.decision.stop_round);
    }
}

#[test]
fn short_budget_ends_with_budget_exhausted() {
    let mut cfg = RunConfig {
        oracle: true,
        ..RunConfig::default()
    };
    cfg.budget = 10;
    cfg.window = 20;
    assert!(cfg.validate().is_err());
    let spec = Run::new(cfg.clone(), "unused").space().unwrap();
    let t = TabularLandscape::generate(4, 1).unwrap();
    let out = stage1_search(&cfg, &spec, RewardOracle::Tabular(&t)).unwrap();
    assert_eq!(out.decision.reason, StopReason::BudgetExhausted);
    assert_eq!(out.decision.stop_round, 10);
}

#[test]
fn pretraining_is_deterministic_and_zero_epochs_keeps_init() {
    let mut cfg = tiny();
    let arch = cfg.architecture().unwrap();
    let data = generate_splits(Task::Source, &cfg.data);
    cfg.pretrain_epochs = 0;
    let zero = pretrain_source(&cfg, &arch, &data.train).unwrap();
    assert_eq!(zero.checkpoint, Network::base(arch.clone(), cfg.pretrain_seed).unwrap().checkpoint());
    assert!(zero.epochs.is_empty());
    cfg.pretrain_epochs = 1;
    let a = pretrain_source(&cfg, &arch, &data.train).unwrap();
    let b = pretrain_source(&cfg, &arch, &data.train).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_ne!(a.checkpoint, zero.checkpoint);
}

#[test]
fn real_search_and_finetuning_keep_their_contracts() {
    let cfg = tiny();
    let arch = cfg.architecture().unwrap();
    let source = generate_splits(Task::Source, &cfg.data);
    let target = generate_splits(Task::Target, &cfg.data);
    let ckpt = pretrain_source(&cfg, &arch, &source.train).unwrap().checkpoint;
    let spec = Run::new(cfg.clone(), "unused").space().unwrap();
    let out = stage1_search(
        &cfg,
        &spec,
        RewardOracle::RealEval {
            checkpoint: &ckpt,
            target: &target,
        },
    )
    .unwrap();
    assert_eq!(out.rounds.len(), out.history.rows().len());
    assert_eq!(out.minibatches, out.rounds.len() * cfg.subnet_batches);
    assert!(out.rounds.iter().all(|r| (0.0..=1.0).contains(&r.raw_reward)));
    let supernet = out.supernet.unwrap().checkpoint();

    let a_star = out.decision.a_star.clone();
    let before = spec.decode(&a_star).unwrap().architecture().to_text();
    let searched = stage2_finetune(&cfg, &spec, &a_star, &ckpt, &supernet, &target).unwrap();
    assert_eq!(searched.frozen_checksum_before, searched.frozen_checksum_after);
    assert_eq!(searched.network.architecture().to_text(), before);
    // frozen weights still equal the source checkpoint
    for (path, v) in &ckpt.records {
        if archft::supernet::outside_scope(path, spec.first_scope_stage()) {
            assert_eq!(&searched.network.store().by_path(path).unwrap().value, v, "{path}");
        }
    }

    let vanilla = vanilla_finetune(&cfg, &spec, &ckpt, &target).unwrap();
    let direct = finetune(
        &cfg,
        &spec,
        &ActionVector::zeros(spec.num_sites()),
        &ckpt,
        InScopeInit::Checkpoint,
        &target,
    )
    .unwrap();
    assert_eq!(vanilla.curve, direct.curve);
    let iters: Vec<usize> = vanilla.curve.iter().map(|p| p.0).collect();
    assert_eq!(iters, searched.curve.iter().map(|p| p.0).collect::<Vec<_>>());
    assert_eq!(iters, vec![0, 2, 4]);

    let wrong = ActionVector::zeros(spec.num_sites() + 1);
    assert!(stage2_finetune(&cfg, &spec, &wrong, &ckpt, &supernet, &target).is_err());
}

#[test]
fn untouched_supernet_zero_action_equals_stage_two_start() {
    let mut cfg = tiny();
    cfg.finetune_epochs = 0;
    let arch = cfg.architecture().unwrap();
    let mut base = Network::base(arch, 5).unwrap();
    let src = generate_splits(Task::Source, &DataSpec { train: 32, ..cfg.data });
    base.train_step(&src.train, &mut Optimizer::sgd(0.05, 0.9)).unwrap();
    let ckpt = base.checkpoint();
    let spec = Run::new(cfg.clone(), "unused").space().unwrap();
    let mut sn = Supernet::build(spec.clone(), Init::Pretrained { checkpoint: &ckpt, seed: 3 }).unwrap();
    let zeros = ActionVector::zeros(spec.num_sites());
    let target = generate_splits(Task::Target, &cfg.data);
    let out = finetune(&cfg, &spec, &zeros, &ckpt, InScopeInit::Supernet(&sn.checkpoint()), &target).unwrap();
    let view = sn.activate(&zeros).unwrap();
    let d = out.network.logits(&target.test).unwrap().max_abs_diff(&view.logits(&target.test).unwrap());
    assert!(d <= 1e-9, "{d}");
    let d = out.network.logits(&target.test).unwrap().max_abs_diff(&base.logits(&target.test).unwrap());
    assert!(d <= 1e-9, "{d}");
}
