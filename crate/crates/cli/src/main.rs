//! `rlfuzz`: fuzz, train, bench and replay from the command line.
//!
//! Every command writes under `<out>/<config hash>-<seed>/`, where `<out>`
//! comes from `--out` or the `RLFUZZ_OUT` environment variable.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rlfuzz_core::agent::{agent_loop, TrainingSchedule};
use rlfuzz_core::bench::{emit_series, parse_policies, run_policy_with};
use rlfuzz_core::engine::RunSummary;
use rlfuzz_core::targets::{self, TargetRegistry};
use rlfuzz_core::{
    init_run, run_experiment, ActionLog, ActionSource, Budget, EngineOptions, EnvConfig, EnvMode,
    Error, ExperimentPlan, PolicySpec,
};

fn defaults() -> EnvConfig {
    EnvConfig::default()
}

#[derive(Parser, Debug)]
#[command(name = "rlfuzz", version, about = "Greybox fuzzing with a learned mutation scheduler")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = "RLFUZZ_OUT", default_value = "rlfuzz-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One fuzzing run with a fixed policy.
    Fuzz(FuzzArgs),
    /// Train the agent and write one checkpoint per episode.
    Train(TrainArgs),
    /// Repeated runs of several policies on the same seeds.
    Bench(BenchArgs),
    /// Re-execute a recorded fuzz run and check it reproduces.
    Replay(ReplayArgs),
    /// List the built-in targets.
    Targets,
}

/// Flags shared by every command that builds an `EnvConfig`. With
/// `--config`, only flags given explicitly override the file.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Base config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Target spec, e.g. `magic_header:FUZZ`, `compare_gate`, `biased:InsertByte`.
    #[arg(long, default_value_t = defaults().target)]
    target: String,

    /// Executions per run.
    #[arg(long, default_value_t = defaults().budget.execs.unwrap_or(200_000))]
    budget_execs: u64,

    /// Wall-clock limit per run in seconds (runs stop at whichever limit comes first;
    /// without an explicit --budget-execs this is the only limit).
    #[arg(long)]
    budget_secs: Option<f64>,

    /// Action ring capacity.
    #[arg(long, default_value_t = defaults().ring_k)]
    ring_k: usize,

    /// Executions between agent observations.
    #[arg(long, default_value_t = defaults().snapshot_s)]
    snapshot_s: u64,

    /// Maximum test input length in bytes.
    #[arg(long, default_value_t = defaults().max_len)]
    max_len: usize,

    /// Run seed (bench: seed of the first repeat).
    #[arg(long, default_value_t = defaults().seed)]
    seed: u64,

    /// Any config key, e.g. `--set agent.gamma=0.9`. Applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct FuzzArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// `random`, `trained:<checkpoint>` or `scripted:<op>+<op>...`.
    #[arg(long, default_value = "random")]
    policy: String,

    /// Exploration rate for a trained policy.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Training episodes (default: agent.episodes).
    #[arg(long)]
    episodes: Option<u32>,

    /// Run the engine on its own thread instead of lock-step.
    #[arg(long = "async")]
    async_mode: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Comma-separated policies.
    #[arg(long, default_value = "random")]
    policies: String,

    /// Runs per policy.
    #[arg(long, default_value_t = 25)]
    repeats: u32,

    /// Breakthrough levels, comma-separated: a run whose final coverage exceeds a level counts.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<u64>,

    /// Exploration rate for trained policies.
    #[arg(long, default_value_t = 0.0)]
    eval_epsilon: f64,

    /// Run the repeats one after another.
    #[arg(long)]
    serial: bool,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Directory written by `rlfuzz fuzz`.
    run_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let sub = matches.subcommand().map(|(_, m)| m.clone());
    match run(cli, sub.as_ref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("rlfuzz: {line}");
            // Exit 1 means "ran, but did not reproduce"; 2 is any other failure.
            if matches!(e.downcast_ref::<Error>(), Some(Error::ReplayMismatch(_))) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli, sub: Option<&ArgMatches>) -> Result<()> {
    match cli.command {
        Command::Fuzz(a) => fuzz(&cli.out, &a, sub),
        Command::Train(a) => train(&cli.out, &a, sub),
        Command::Bench(a) => bench(&cli.out, &a, sub),
        Command::Replay(a) => replay(&a),
        Command::Targets => {
            for name in TargetRegistry::default().names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn build_config(args: &ConfigArgs, matches: Option<&ArgMatches>) -> Result<EnvConfig> {
    let mut cfg = match &args.config {
        Some(p) => EnvConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => EnvConfig::default(),
    };
    let explicit = |id: &str| {
        matches.is_some_and(|m| {
            matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
        })
    };
    let take = |id: &str| args.config.is_none() || explicit(id);
    if take("target") {
        cfg.target = args.target.clone();
    }
    if take("budget_execs") {
        cfg.budget.execs = Some(args.budget_execs);
    }
    if let Some(s) = args.budget_secs {
        cfg.budget.secs = Some(s);
        if !explicit("budget_execs") {
            cfg.budget.execs = None;
        }
    }
    if take("ring_k") {
        cfg.ring_k = args.ring_k;
    }
    if take("snapshot_s") {
        cfg.snapshot_s = args.snapshot_s;
    }
    if take("max_len") {
        cfg.max_len = args.max_len;
    }
    if take("seed") {
        cfg.seed = args.seed;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(out: &Path, cfg: &EnvConfig) -> Result<PathBuf> {
    let dir = out.join(format!("{}-{}", cfg.hash(), cfg.seed));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.save(&dir.join("config.txt"))?;
    Ok(dir)
}

fn fuzz(out: &Path, a: &FuzzArgs, m: Option<&ArgMatches>) -> Result<()> {
    let cfg = build_config(&a.config, m)?;
    let policy: PolicySpec = a.policy.parse().map_err(|e| anyhow!("{e}"))?;
    let target = targets::by_name(&cfg.target)?;
    let dir = run_dir(out, &cfg)?;
    log::info!("fuzzing {} with {} into {}", cfg.target, policy.name(), dir.display());
    let (engine, report) = run_policy_with(target, &cfg, &policy, None, a.epsilon, true)?;

    let corpus_dir = dir.join("corpus");
    if corpus_dir.exists() {
        std::fs::remove_dir_all(&corpus_dir)?;
    }
    engine.corpus().write_dir(&corpus_dir)?;
    engine
        .action_log()
        .ok_or_else(|| anyhow!("engine did not record actions"))?
        .write(&dir.join("actions.bin"))?;
    report.write_csv(&dir.join("series.csv"))?;
    report.write_summary(&dir.join("summary.json"))?;
    println!(
        "cov {} after {} executions, corpus {} entries -> {}",
        report.final_cov,
        report.executions,
        report.corpus_len,
        dir.display()
    );
    Ok(())
}

fn train(out: &Path, a: &TrainArgs, m: Option<&ArgMatches>) -> Result<()> {
    let mut cfg = build_config(&a.config, m)?;
    if let Some(e) = a.episodes {
        cfg.agent.episodes = e;
        cfg.validate()?;
    }
    let target = targets::by_name(&cfg.target)?;
    let dir = run_dir(out, &cfg)?;
    let schedule = TrainingSchedule {
        episodes: cfg.agent.episodes,
        mode: if a.async_mode { EnvMode::Async } else { EnvMode::Deterministic },
        checkpoint_dir: Some(dir.join("checkpoints")),
        total_steps: None,
    };
    let outcome = agent_loop(target, &cfg, &schedule)?;
    outcome.write_log(&dir.join("train_log.csv"))?;
    let last = outcome
        .checkpoints
        .last()
        .ok_or_else(|| anyhow!("training produced no checkpoint"))?;
    println!(
        "trained {} episodes ({} agent steps), coverage per episode {:?}",
        outcome.episode_cov.len(),
        outcome.agent_steps,
        outcome.episode_cov
    );
    println!("checkpoint {}", last.display());
    Ok(())
}

fn bench(out: &Path, a: &BenchArgs, m: Option<&ArgMatches>) -> Result<()> {
    let cfg = build_config(&a.config, m)?;
    let policies = parse_policies(&a.policies)?;
    let mut plan = ExperimentPlan::for_target(&cfg.target, policies, cfg.clone())?;
    plan.repeats = a.repeats;
    plan.thresholds = a.thresholds.clone();
    plan.eval_epsilon = a.eval_epsilon;
    plan.parallel = !a.serial;
    let report = run_experiment(&plan)?;
    let dir = run_dir(out, &cfg)?;
    report.write_json(&dir.join("bench.json"))?;
    report.write_runs_csv(&dir.join("bench_runs.csv"))?;
    emit_series(&report, &dir.join("bench_series.csv"))?;
    for s in &report.stats {
        let hits: Vec<String> = s.breakthroughs.iter().map(|(t, k)| format!(">{t}: {k}")).collect();
        println!(
            "{:<32} runs {} best {} mean {:.1} [{:.1}, {:.1}] {}",
            s.policy,
            s.runs,
            s.best,
            s.mean,
            s.ci_lo,
            s.ci_hi,
            hits.join(" ")
        );
    }
    println!("report -> {}", dir.display());
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let dir = &a.run_dir;
    let cfg = EnvConfig::load(&dir.join("config.txt"))?;
    let log = ActionLog::read(&dir.join("actions.bin"))?;
    let summary = RunSummary::load(&dir.join("summary.json"))?;
    if log.config_hash != cfg.hash() {
        bail!(Error::ReplayMismatch(format!("log config hash {} but config hashes to {}", log.config_hash, cfg.hash())));
    }
    if log.seed != cfg.seed {
        bail!(Error::ReplayMismatch(format!("log seed {} but config seed {}", log.seed, cfg.seed)));
    }
    if log.actions.is_empty() {
        bail!(Error::ReplayMismatch("action log is empty".into()));
    }
    let target = targets::by_name(&cfg.target)?;
    let mut replay_cfg = cfg.clone();
    replay_cfg.budget = Budget::execs(log.actions.len() as u64);
    let (mut engine, _link) = init_run(Arc::clone(&target), &replay_cfg, EngineOptions::default())?;
    engine.set_action_source(ActionSource::Scripted {
        actions: log.actions,
        pos: 0,
    });
    let report = engine.run(replay_cfg.budget);
    if report.executions != summary.executions {
        bail!(Error::ReplayMismatch(format!("{} executions, recorded {}", report.executions, summary.executions)));
    }
    if report.final_cov != summary.final_cov {
        bail!(Error::ReplayMismatch(format!("final cov {}, recorded {}", report.final_cov, summary.final_cov)));
    }
    if report.corpus_digest != summary.corpus_digest {
        bail!(Error::ReplayMismatch(format!(
            "corpus digest {}, recorded {}",
            report.corpus_digest, summary.corpus_digest
        )));
    }
    println!(
        "replay ok: cov {} over {} executions, corpus digest {}",
        report.final_cov, report.executions, report.corpus_digest
    );
    Ok(())
}
