use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rlfuzz_core::EnvConfig;

fn rlfuzz(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlfuzz"))
        .args(args)
        .env("RLFUZZ_OUT", out)
        .env_remove("RUST_LOG")
        .output()
        .expect("run rlfuzz")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = rlfuzz(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn one_line_error(o: &Output) -> String {
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("rlfuzz: "), "{err}");
    err
}

const FUZZ: [&str; 9] = [
    "fuzz",
    "--target",
    "magic_header",
    "--policy",
    "random",
    "--budget-execs",
    "100000",
    "--seed",
    "1",
];

#[test]
fn fuzz_twice_gives_identical_summaries() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &FUZZ);
    ok(b.path(), &FUZZ);
    let (da, db) = (only_run_dir(a.path()), only_run_dir(b.path()));
    assert_eq!(da.file_name(), db.file_name());
    let sa = std::fs::read_to_string(da.join("summary.json")).unwrap();
    let sb = std::fs::read_to_string(db.join("summary.json")).unwrap();
    assert_eq!(sa, sb);

    let cfg = EnvConfig::load(&da.join("config.txt")).unwrap();
    assert_eq!(da.file_name().unwrap().to_str().unwrap(), format!("{}-1", cfg.hash()));
    let v: serde_json::Value = serde_json::from_str(&sa).unwrap();
    assert_eq!(v["executions"], 100_000);
    assert_eq!(v["config_hash"], cfg.hash());
    let corpus_files = std::fs::read_dir(da.join("corpus")).unwrap().count() as u64;
    assert_eq!(corpus_files, v["corpus_len"].as_u64().unwrap());
    // 32 header bytes, then 9 bytes per execution.
    let log_len = std::fs::metadata(da.join("actions.bin")).unwrap().len();
    assert_eq!(log_len, 32 + 9 * 100_000);
}

#[test]
fn replay_accepts_fresh_runs_and_rejects_tampered_ones() {
    let out = tempfile::tempdir().unwrap();
    ok(out.path(), &["fuzz", "--target", "compare_gate", "--budget-execs", "20000", "--seed", "4"]);
    let dir = only_run_dir(out.path());
    let dir_arg = dir.to_str().unwrap();
    let stdout = ok(out.path(), &["replay", dir_arg]);
    assert!(stdout.starts_with("replay ok"), "{stdout}");

    let summary_path = dir.join("summary.json");
    let original = std::fs::read_to_string(&summary_path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&original).unwrap();
    v["final_cov"] = serde_json::json!(v["final_cov"].as_u64().unwrap() + 1);
    std::fs::write(&summary_path, serde_json::to_string(&v).unwrap()).unwrap();
    let o = rlfuzz(out.path(), &["replay", dir_arg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(one_line_error(&o).contains("final cov"));
    std::fs::write(&summary_path, original).unwrap();

    let cfg_path = dir.join("config.txt");
    let text = std::fs::read_to_string(&cfg_path).unwrap();
    std::fs::write(&cfg_path, text.replace("seed = 4", "seed = 5")).unwrap();
    let o = rlfuzz(out.path(), &["replay", dir_arg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(one_line_error(&o).contains("hash"));
}

#[test]
fn errors_are_one_line_and_nonzero() {
    let out = tempfile::tempdir().unwrap();
    let missing = out.path().join("nope");
    let o = rlfuzz(out.path(), &["replay", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    one_line_error(&o);

    let o = rlfuzz(out.path(), &["fuzz", "--target", "no_such_target"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(one_line_error(&o).contains("no_such_target"));

    let o = rlfuzz(out.path(), &["fuzz", "--set", "agent.gamma=2"]);
    assert_eq!(o.status.code(), Some(2));
    one_line_error(&o);

    let o = rlfuzz(out.path(), &["bench", "--policies", "trained:/does/not/exist.ckpt", "--repeats", "1"]);
    assert_ne!(o.status.code(), Some(0));
    one_line_error(&o);
}

#[test]
fn config_file_is_overridden_only_by_explicit_flags() {
    let out = tempfile::tempdir().unwrap();
    let cfg_file = out.path().join("base.txt");
    std::fs::write(&cfg_file, "target = compare_gate\nring_k = 8\nbudget_execs = 3000\nseed = 9\n").unwrap();
    let runs = out.path().join("runs");
    ok(&runs, &["fuzz", "--config", cfg_file.to_str().unwrap(), "--seed", "3", "--set", "agent.gamma=0.5"]);
    let cfg = EnvConfig::load(&only_run_dir(&runs).join("config.txt")).unwrap();
    assert_eq!(cfg.target, "compare_gate");
    assert_eq!(cfg.ring_k, 8);
    assert_eq!(cfg.budget.execs, Some(3000));
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.agent.gamma, 0.5);
}

#[test]
fn help_defaults_match_the_library() {
    let out = tempfile::tempdir().unwrap();
    let help = ok(out.path(), &["fuzz", "--help"]);
    let d = EnvConfig::default();
    for (flag, value) in [
        ("--target", d.target.clone()),
        ("--budget-execs", d.budget.execs.unwrap().to_string()),
        ("--ring-k", d.ring_k.to_string()),
        ("--snapshot-s", d.snapshot_s.to_string()),
        ("--max-len", d.max_len.to_string()),
        ("--seed", d.seed.to_string()),
    ] {
        let line = help.lines().find(|l| l.trim_start().starts_with(flag)).unwrap();
        assert!(line.contains(&format!("[default: {value}]")), "{line}");
    }
}

#[test]
fn train_then_bench_a_trained_policy_against_random() {
    let out = tempfile::tempdir().unwrap();
    let common = [
        "--target",
        "biased:InsertByte",
        "--budget-execs",
        "4096",
        "--max-len",
        "64",
        "--snapshot-s",
        "64",
        "--set",
        "agent.units=8",
        "--set",
        "agent.embed=8",
    ];
    let train_out = out.path().join("train");
    let mut args = vec!["train", "--episodes", "2"];
    args.extend(common);
    let stdout = ok(&train_out, &args);
    let ckpt = stdout
        .lines()
        .find_map(|l| l.strip_prefix("checkpoint "))
        .expect("checkpoint line")
        .to_string();
    assert!(Path::new(&ckpt).exists());
    let train_dir = only_run_dir(&train_out);
    assert!(train_dir.join("checkpoints/episode-1.ckpt").exists());
    assert!(train_dir.join("train_log.csv").exists());

    let bench_out = out.path().join("bench");
    let policies = format!("random,trained:{ckpt}");
    let mut args = vec!["bench", "--repeats", "25", "--policies", &policies, "--thresholds", "5,10"];
    args.extend(common);
    ok(&bench_out, &args);
    let dir = only_run_dir(&bench_out);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bench.json")).unwrap()).unwrap();
    let groups = v["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    for g in groups {
        assert_eq!(g["runs"].as_array().unwrap().len(), 25);
    }
    assert_eq!(v["budget_fair"], true);
    for f in ["bench_runs.csv", "bench_series.csv", "bench_series_summary.csv", "config.txt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn out_flag_beats_environment() {
    let env_out = tempfile::tempdir().unwrap();
    let flag_out = tempfile::tempdir().unwrap();
    ok(env_out.path(), &["fuzz", "--budget-execs", "1000", "--out", flag_out.path().to_str().unwrap()]);
    assert_eq!(std::fs::read_dir(env_out.path()).unwrap().count(), 0);
    only_run_dir(flag_out.path());
}
