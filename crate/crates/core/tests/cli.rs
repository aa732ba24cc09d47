use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use archft::cli::{self, parse_config, EXIT_CONFIG, EXIT_OK, EXIT_PHASE};

const TINY: &[&str] = &[
    "train_size=128",
    "val_size=64",
    "test_size=64",
    "batch_size=32",
    "pretrain_epochs=1",
    "budget=12",
    "window=5",
    "finetune_epochs=1",
    "eval_every=2",
];

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("archft").chain(args.iter().copied());
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn with_tiny<'a>(mut args: Vec<&'a str>) -> Vec<&'a str> {
    args.extend_from_slice(TINY);
    args
}

fn report_map(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn only_subdir(root: &Path) -> PathBuf {
    let entries: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries[0].clone()
}

#[test]
fn empty_config_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.cfg");
    fs::write(&path, "").unwrap();
    let cfg = parse_config(&path).unwrap();
    assert_eq!(cfg.controller.learning_rate, 3.5e-4);
    assert_eq!(cfg.supernet_lr, 0.05);
    assert_eq!(cfg.batch_size, 64);
    assert_eq!(cfg.budget, 500);
    assert_eq!(cfg.window, 20);
    assert_eq!(cfg.p_stop, 0.9);
    assert_eq!(cfg.to_text(), archft::pipeline::RunConfig::default().to_text());
}

#[test]
fn config_file_comments_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.cfg");
    fs::write(&path, "# comment\nscope = medium\n\nbudget = 40\n").unwrap();
    let cfg = parse_config(&path).unwrap();
    let run = archft::pipeline::Run::new(cfg.clone(), dir.path());
    assert_eq!(run.space().unwrap().num_sites(), 8);
    assert_eq!(cfg.budget, 40);
    fs::write(&path, "scope medium\n").unwrap();
    assert!(parse_config(&path).is_err());
}

#[test]
fn bad_values_exit_with_config_error_naming_the_key() {
    let root = tempfile::tempdir().unwrap();
    let runs = root.path().to_str().unwrap();
    for (arg, key) in [("gamma=two", "gamma"), ("bogus=1", "bogus"), ("budget=", "budget"), ("window=0", "window")] {
        let (code, _, err) = call(&["search", "--runs", runs, arg]);
        assert_eq!(code, EXIT_CONFIG, "{arg}: {err}");
        assert!(err.starts_with("config error"), "{err}");
        assert!(err.contains(key), "{arg}: {err}");
    }
    let (code, _, err) = call(&["search", "--runs", runs, "budget=10"]);
    assert_eq!(code, EXIT_CONFIG, "{err}");
    let (code, _, _) = call(&["no-such-command"]);
    assert_eq!(code, EXIT_CONFIG);
    let (code, out, _) = call(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("run-all"));
    // nothing was created for rejected configs
    assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn oracle_run_all_is_idempotent() {
    let root = tempfile::tempdir().unwrap();
    let runs = root.path().to_str().unwrap();
    let (code, first, err) = call(&["run-all", "--runs", runs, "oracle=true", "--seed", "2"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(first.lines().filter(|l| l.ends_with(" ran")).count(), 6);
    let dir = only_subdir(root.path());
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-s2"));
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    let actions = fs::read(dir.join("actions.csv")).unwrap();

    let (code, second, _) = call(&["run-all", "--runs", runs, "oracle=true", "--seed", "2"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(second.lines().filter(|l| l.ends_with(" skipped")).count(), 6);
    assert_eq!(fs::read_to_string(dir.join("report.txt")).unwrap(), report);
    assert_eq!(fs::read(dir.join("actions.csv")).unwrap(), actions);

    let m = report_map(&report);
    assert_eq!(m["mode"], "oracle");
    assert_eq!(m["stop_reason"], "stable");
    assert_eq!(m["supernet_minibatches"], "0");
    for k in ["pretrain_train_acc", "searched_final_acc", "finetune_saving"] {
        assert_eq!(m[k], "n/a", "{k}");
    }
    assert!(!dir.join("supernet.ckpt").exists());
    assert!(!dir.join("pretrained.ckpt").exists());

    // report subcommand reads config.resolved from the run dir
    let d = dir.to_str().unwrap();
    let (code, out, _) = call(&["report", "--run-dir", d]);
    assert_eq!(code, EXIT_OK);
    assert!(out.ends_with(&report));
}

#[test]
fn report_matches_independent_aggregation_of_the_logs() {
    let root = tempfile::tempdir().unwrap();
    let runs = root.path().to_str().unwrap();
    let (code, out, err) = call(&with_tiny(vec!["run-all", "--runs", runs]));
    assert_eq!(code, EXIT_OK, "{err}");
    let dir = only_subdir(root.path());
    let m = report_map(&fs::read_to_string(dir.join("report.txt")).unwrap());
    assert!(out.contains("finetune_saving = "));

    let actions = rows(&dir.join("actions.csv"));
    let rewards = rows(&dir.join("reward.csv"));
    assert_eq!(actions.len(), rewards.len());
    let last = actions.last().unwrap();
    let k = last.len() - 3;
    assert_eq!(m["sites"], k.to_string());
    assert_eq!(m["stop_round"], last[0]);
    assert_eq!(m["stop_round"], actions.len().to_string());
    assert_eq!(m["a_star"], last[k + 1]);
    let stable = last[k + 2] == "1";
    assert_eq!(m["stop_reason"], if stable { "stable" } else { "budget_exhausted" });
    let rounds: f64 = last[0].parse().unwrap();
    let saving = if stable { 1.0 - rounds / 12.0 } else { 0.0 };
    assert_eq!(m["search_saving"], format!("{saving:.4}"));
    assert_eq!(m["supernet_minibatches"], (actions.len() * 4).to_string());
    let tail: Vec<f64> = rewards[rewards.len().saturating_sub(5)..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(m["final_window_reward"], format!("{:.4}", tail.iter().sum::<f64>() / tail.len() as f64));
    let mut cum = 0.0;
    for r in &rewards {
        cum += r[1].parse::<f64>().unwrap();
        assert!((r[3].parse::<f64>().unwrap() - cum).abs() < 1e-5);
    }

    let curve = |name: &str| -> Vec<(usize, f64)> {
        rows(&dir.join(name)).iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect()
    };
    let (s, v) = (curve("searched_curve.csv"), curve("vanilla_curve.csv"));
    let peak_s = s.iter().map(|p| p.1).fold(0.0, f64::max);
    let peak_v = v.iter().map(|p| p.1).fold(0.0, f64::max);
    let level = peak_s.min(peak_v);
    let first = |c: &[(usize, f64)]| c.iter().find(|p| p.1 >= level).unwrap().0;
    let (is, iv) = (first(&s), first(&v));
    assert_eq!(m["matched_accuracy"], format!("{level:.4}"));
    assert_eq!(m["searched_iters_at_match"], is.to_string());
    assert_eq!(m["vanilla_iters_at_match"], iv.to_string());
    if iv > 0 {
        assert_eq!(m["finetune_saving"], format!("{:.4}", 1.0 - is as f64 / iv as f64));
    }
    assert_eq!(m["searched_final_acc"], format!("{:.4}", s.last().unwrap().1));
    assert_eq!(m["vanilla_final_acc"], format!("{:.4}", v.last().unwrap().1));
    let joined = rows(&dir.join("finetune.csv"));
    assert_eq!(joined.len(), s.len());

    // deleting a log makes the report fail and name it
    fs::remove_file(dir.join("vanilla_curve.csv")).unwrap();
    let (code, _, err) = call(&["report", "--run-dir", dir.to_str().unwrap()]);
    assert_eq!(code, EXIT_PHASE);
    assert!(err.contains("vanilla_curve.csv"), "{err}");
}

#[test]
fn corrupted_checkpoint_fails_the_search_phase() {
    let root = tempfile::tempdir().unwrap();
    let runs = root.path().to_str().unwrap();
    for phase in ["gen-data", "pretrain"] {
        let (code, _, err) = call(&with_tiny(vec![phase, "--runs", runs]));
        assert_eq!(code, EXIT_OK, "{phase}: {err}");
    }
    let dir = only_subdir(root.path());
    let ckpt = dir.join("pretrained.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&ckpt, bytes).unwrap();
    let (code, _, err) = call(&with_tiny(vec!["search", "--runs", runs]));
    assert_eq!(code, EXIT_PHASE, "{err}");
    assert!(err.contains("search"), "{err}");
    assert!(!dir.join("search.done").exists());

    // phases refuse to run before their inputs exist
    let fresh = tempfile::tempdir().unwrap();
    let (code, _, err) = call(&with_tiny(vec!["finetune", "--runs", fresh.path().to_str().unwrap()]));
    assert_eq!(code, EXIT_PHASE);
    assert!(err.contains("finetune"), "{err}");
}

#[test]
fn binary_uses_run_root_from_environment() {
    let root = tempfile::tempdir().unwrap();
    let cwd = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_archft"))
        .args(["search", "oracle=true"])
        .env(cli::RUN_ROOT_ENV, root.path())
        .current_dir(cwd.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let dir = only_subdir(root.path());
    assert!(dir.join("actions.csv").is_file());
    assert_eq!(fs::read_dir(cwd.path()).unwrap().count(), 0);

    let bad = Command::new(env!("CARGO_BIN_EXE_archft"))
        .args(["search", "gamma=two"])
        .env(cli::RUN_ROOT_ENV, root.path())
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("gamma"));
}
