//! Repeated-trial experiments: several policies, equal per-run execution
//! budgets, per-run seeds `base_seed + run`, and the statistics to compare
//! them.
//!
//! # Output schemas
//!
//! * Long-format series CSV, `policy,run,step,cov`: `step` counts
//!   executions, `cov` is the number of distinct edges after that many
//!   executions. Rows are written at every coverage gain plus the last
//!   execution, so each run's rows form a non-decreasing step function.
//! * Summary CSV, `policy,step,n,mean,sd,ci_lo,ci_hi`: coverage across runs
//!   on the union of all change points, with a 95% normal band
//!   `mean ± 1.96 * sd / sqrt(n)` (`sd` is the sample standard deviation).
//! * JSON report: [`ExperimentReport`] serialised as is.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::agent::{checkpoint, QNetwork, QPolicy};
use crate::config::EnvConfig;
use crate::engine::{self, ActionSource, Engine, EngineOptions, RunReport};
use crate::env::{EnvMode, FuzzEnv};
use crate::mutators::MutatorAction;
use crate::targets::{self, TargetProgram};
use crate::Error;

/// z for a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// How actions are chosen during a run.
#[derive(Clone, Debug)]
pub enum PolicySpec {
    /// Hard-wired uniform choice inside the engine.
    Uniform,
    /// Weights from a checkpoint file, acting through the environment.
    Trained(PathBuf),
    /// Weights already in memory.
    Network { name: String, net: Arc<QNetwork> },
    /// A fixed action sequence, repeated.
    Scripted(Vec<MutatorAction>),
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Uniform => "random".into(),
            PolicySpec::Trained(p) => format!("trained:{}", p.display()),
            PolicySpec::Network { name, .. } => name.clone(),
            PolicySpec::Scripted(a) => {
                let names: Vec<_> = a.iter().map(|a| a.name()).collect();
                format!("scripted:{}", names.join("+"))
            }
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    /// `random`, `trained:<checkpoint>` or `scripted:<op>[+<op>...]`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "random" | "uniform" => Ok(PolicySpec::Uniform),
            "trained" if !arg.is_empty() => Ok(PolicySpec::Trained(PathBuf::from(arg))),
            "scripted" if !arg.is_empty() => Ok(PolicySpec::Scripted(
                arg.split('+').map(str::parse).collect::<Result<_, _>>()?,
            )),
            _ => Err(Error::Config(format!("unknown policy {s:?}"))),
        }
    }
}

/// Parse a comma-separated policy list.
pub fn parse_policies(s: &str) -> Result<Vec<PolicySpec>, Error> {
    s.split(',').filter(|p| !p.is_empty()).map(str::parse).collect()
}

#[derive(Clone)]
pub struct ExperimentPlan {
    pub target: Arc<dyn TargetProgram>,
    pub policies: Vec<PolicySpec>,
    pub repeats: u32,
    /// Per-run settings; `seed` is the base seed and `budget` the per-run
    /// budget shared by every policy.
    pub config: EnvConfig,
    /// Coverage levels at which breakthroughs are counted.
    pub thresholds: Vec<u64>,
    /// Exploration rate of network policies during evaluation.
    pub eval_epsilon: f64,
    /// Run in parallel across the rayon pool.
    pub parallel: bool,
}

impl ExperimentPlan {
    pub fn new(target: Arc<dyn TargetProgram>, policies: Vec<PolicySpec>, config: EnvConfig) -> Self {
        Self {
            target,
            policies,
            repeats: 25,
            config,
            thresholds: Vec::new(),
            eval_epsilon: 0.0,
            parallel: true,
        }
    }

    /// Resolve the target by name through the built-in registry.
    pub fn for_target(spec: &str, policies: Vec<PolicySpec>, config: EnvConfig) -> Result<Self, Error> {
        Ok(Self::new(targets::by_name(spec)?, policies, config))
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.config.validate()?;
        if self.policies.is_empty() || self.repeats == 0 {
            return Err(Error::Config("need at least one policy and one repeat".into()));
        }
        if self.config.budget.execs.is_none() {
            return Err(Error::Config(
                "experiments need an execution budget so policies get equal work".into(),
            ));
        }
        if self.thresholds.contains(&0) {
            return Err(Error::Config("thresholds must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub executions: u64,
    pub final_cov: u64,
    pub corpus_digest: String,
    /// `(step, cov)` change points plus the final execution.
    pub series: Vec<(u64, u64)>,
    /// Executions per operator, indexed like [`MutatorAction::ALL`].
    pub selected: Vec<u64>,
}

impl RunRecord {
    fn from_report(r: &RunReport) -> Self {
        let mut series: Vec<(u64, u64)> = r.series.iter().map(|s| (s.step, s.cov)).collect();
        if series.last().map(|s| s.0) != Some(r.executions) {
            series.push((r.executions, r.final_cov));
        }
        Self {
            seed: r.seed,
            executions: r.executions,
            final_cov: r.final_cov,
            corpus_digest: r.corpus_digest.clone(),
            series,
            selected: r.selected.to_vec(),
        }
    }

    pub fn cov_at(&self, step: u64) -> u64 {
        match self.series.partition_point(|&(s, _)| s <= step) {
            0 => 0,
            i => self.series[i - 1].1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyGroup {
    pub policy: String,
    pub runs: Vec<RunRecord>,
}

impl PolicyGroup {
    pub fn final_covs(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.final_cov).collect()
    }

    pub fn best(&self) -> u64 {
        self.runs.iter().map(|r| r.final_cov).max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        mean(&self.final_covs().iter().map(|&c| c as f64).collect::<Vec<_>>())
    }

    pub fn breakthroughs(&self, threshold: u64) -> usize {
        self.runs.iter().filter(|r| r.final_cov > threshold).count()
    }

    pub fn breakthrough_rate(&self, threshold: u64) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.breakthroughs(threshold) as f64 / self.runs.len() as f64
    }

    /// Executions per operator summed over runs.
    pub fn action_histogram(&self) -> BTreeMap<String, u64> {
        MutatorAction::ALL
            .iter()
            .map(|a| {
                let n = self.runs.iter().map(|r| r.selected[a.index()]).sum();
                (a.name().to_string(), n)
            })
            .collect()
    }

    /// Fraction of executions that used one of `class`.
    pub fn class_share(&self, class: &[MutatorAction]) -> f64 {
        let total: u64 = self.runs.iter().flat_map(|r| &r.selected).sum();
        let hit: u64 = self
            .runs
            .iter()
            .map(|r| class.iter().map(|a| r.selected[a.index()]).sum::<u64>())
            .sum();
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    /// Final-coverage histogram with buckets of `width` edges, keyed by
    /// bucket lower bound.
    pub fn coverage_histogram(&self, width: u64) -> BTreeMap<u64, u64> {
        let width = width.max(1);
        let mut h = BTreeMap::new();
        for r in &self.runs {
            *h.entry(r.final_cov / width * width).or_insert(0) += 1;
        }
        h
    }

    /// Mean and 95% band across runs at every change point of any run.
    pub fn series_summary(&self) -> Vec<SeriesPoint> {
        let steps: BTreeSet<u64> = self
            .runs
            .iter()
            .flat_map(|r| r.series.iter().map(|s| s.0))
            .chain(std::iter::once(0))
            .collect();
        steps
            .into_iter()
            .map(|step| {
                let xs: Vec<f64> = self.runs.iter().map(|r| r.cov_at(step) as f64).collect();
                let (m, sd) = (mean(&xs), sample_sd(&xs));
                let half = ci_half_width(sd, xs.len());
                SeriesPoint {
                    step,
                    n: xs.len(),
                    mean: m,
                    sd,
                    ci_lo: m - half,
                    ci_hi: m + half,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: u64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub policy: String,
    pub runs: usize,
    pub best: u64,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Runs whose final coverage exceeds each threshold.
    pub breakthroughs: BTreeMap<u64, usize>,
    pub actions: BTreeMap<String, u64>,
    /// Final coverage bucketed by `histogram_width`.
    pub coverage_histogram: BTreeMap<u64, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub target: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub repeats: u32,
    pub budget_execs: u64,
    pub thresholds: Vec<u64>,
    pub histogram_width: u64,
    pub groups: Vec<PolicyGroup>,
    pub stats: Vec<GroupStats>,
    /// Every run of every policy performed the same number of executions.
    pub budget_fair: bool,
}

impl ExperimentReport {
    pub fn group(&self, policy: &str) -> Option<&PolicyGroup> {
        self.groups.iter().find(|g| g.policy == policy)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), Error> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Per-run table: `policy,run,seed,executions,final_cov`.
    pub fn write_runs_csv(&self, path: &Path) -> Result<(), Error> {
        let mut s = String::from("policy,run,seed,executions,final_cov\n");
        for g in &self.groups {
            for (i, r) in g.runs.iter().enumerate() {
                let _ = writeln!(s, "{},{i},{},{},{}", g.policy, r.seed, r.executions, r.final_cov);
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Fraction of the runs in `group` whose final coverage exceeds `threshold`.
pub fn breakthrough_rate(group: &PolicyGroup, threshold: u64) -> f64 {
    group.breakthrough_rate(threshold)
}

fn resolve_network(policy: &PolicySpec) -> Result<Option<Arc<QNetwork>>, Error> {
    match policy {
        PolicySpec::Trained(path) => Ok(Some(Arc::new(checkpoint::load(path)?))),
        PolicySpec::Network { net, .. } => Ok(Some(net.clone())),
        _ => Ok(None),
    }
}

/// One run of one policy with the given config.
pub fn run_policy(
    target: Arc<dyn TargetProgram>,
    config: &EnvConfig,
    policy: &PolicySpec,
    net: Option<&Arc<QNetwork>>,
    eval_epsilon: f64,
) -> Result<RunReport, Error> {
    run_policy_with(target, config, policy, net, eval_epsilon, false).map(|(_, r)| r)
}

/// [`run_policy`], also handing back the finished engine (corpus,
/// dictionaries and, with `record_actions`, the action log).
pub fn run_policy_with(
    target: Arc<dyn TargetProgram>,
    config: &EnvConfig,
    policy: &PolicySpec,
    net: Option<&Arc<QNetwork>>,
    eval_epsilon: f64,
    record_actions: bool,
) -> Result<(Engine, RunReport), Error> {
    let budget = config.budget;
    match policy {
        PolicySpec::Uniform | PolicySpec::Scripted(_) => {
            let options = EngineOptions {
                record_actions,
                ..EngineOptions::default()
            };
            let (mut engine, _link) = engine::init_run(target, config, options)?;
            let source = match policy {
                PolicySpec::Scripted(actions) if !actions.is_empty() => ActionSource::Scripted {
                    actions: actions.clone(),
                    pos: 0,
                },
                PolicySpec::Scripted(_) => {
                    return Err(Error::Config("scripted policy needs at least one action".into()))
                }
                _ => ActionSource::Uniform,
            };
            engine.set_action_source(source);
            let report = engine.run(budget);
            Ok((engine, report))
        }
        PolicySpec::Trained(_) | PolicySpec::Network { .. } => {
            let net = match net {
                Some(n) => n.clone(),
                None => resolve_network(policy)?.expect("network policy"),
            };
            let dims = net.dims();
            if dims.inputs != 8 * config.max_len || dims.actions != MutatorAction::COUNT {
                return Err(Error::Dimension(format!(
                    "network expects {} inputs and {} actions, run has {} and {}",
                    dims.inputs,
                    dims.actions,
                    8 * config.max_len,
                    MutatorAction::COUNT
                )));
            }
            let mut env =
                FuzzEnv::new(target, config.clone(), EnvMode::Deterministic)?.record_actions(record_actions);
            let mut agent = QPolicy::new((*net).clone(), eval_epsilon, config.seed);
            let mut obs = env.reset()?;
            loop {
                let a = agent.act(&obs)?;
                let r = env.step(a)?;
                obs = r.obs;
                if r.done {
                    break;
                }
            }
            Ok(env.into_finished().expect("episode ran to completion"))
        }
    }
}

/// Execute `repeats` runs of every policy and aggregate them.
///
/// Run `i` of every policy uses seed `config.seed + i`, so policies are
/// compared on the same seeds. Parallel and serial execution give the same
/// report.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport, Error> {
    plan.validate()?;
    let nets: Vec<Option<Arc<QNetwork>>> =
        plan.policies.iter().map(resolve_network).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, u32)> = (0..plan.policies.len())
        .flat_map(|p| (0..plan.repeats).map(move |r| (p, r)))
        .collect();
    let run = |&(p, r): &(usize, u32)| -> Result<RunRecord, Error> {
        let mut cfg = plan.config.clone();
        cfg.seed = plan.config.seed.wrapping_add(r as u64);
        let report = run_policy(
            plan.target.clone(),
            &cfg,
            &plan.policies[p],
            nets[p].as_ref(),
            plan.eval_epsilon,
        )?;
        Ok(RunRecord::from_report(&report))
    };
    let records: Vec<RunRecord> = if plan.parallel {
        jobs.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    };

    let mut groups: Vec<PolicyGroup> = plan
        .policies
        .iter()
        .map(|p| PolicyGroup {
            policy: p.name(),
            runs: Vec::with_capacity(plan.repeats as usize),
        })
        .collect();
    for (&(p, _), rec) in jobs.iter().zip(records) {
        groups[p].runs.push(rec);
    }

    let budget_execs = plan.config.budget.execs.unwrap_or(0);
    let budget_fair = groups
        .iter()
        .flat_map(|g| &g.runs)
        .all(|r| r.executions == budget_execs);
    let histogram_width = (plan.target.total_edges() as u64 / 16).max(1);
    let stats = groups
        .iter()
        .map(|g| {
            let xs: Vec<f64> = g.final_covs().iter().map(|&c| c as f64).collect();
            let (m, sd) = (mean(&xs), sample_sd(&xs));
            let half = ci_half_width(sd, xs.len());
            GroupStats {
                policy: g.policy.clone(),
                runs: g.runs.len(),
                best: g.best(),
                mean: m,
                sd,
                ci_lo: m - half,
                ci_hi: m + half,
                breakthroughs: plan.thresholds.iter().map(|&t| (t, g.breakthroughs(t))).collect(),
                actions: g.action_histogram(),
                coverage_histogram: g.coverage_histogram(histogram_width),
            }
        })
        .collect();
    Ok(ExperimentReport {
        target: plan.target.name().to_string(),
        config_hash: plan.config.hash(),
        base_seed: plan.config.seed,
        repeats: plan.repeats,
        budget_execs,
        thresholds: plan.thresholds.clone(),
        histogram_width,
        groups,
        stats,
        budget_fair,
    })
}

/// Path of the summary CSV written next to a long-format series CSV.
pub fn summary_path(series_path: &Path) -> PathBuf {
    let stem = series_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    series_path.with_file_name(format!("{stem}_summary.csv"))
}

/// Write the long-format series to `path` and the per-policy mean/CI
/// summary to [`summary_path`]`(path)`.
pub fn emit_series(report: &ExperimentReport, path: &Path) -> Result<(), Error> {
    let mut long = String::from("policy,run,step,cov\n");
    let mut summary = String::from("policy,step,n,mean,sd,ci_lo,ci_hi\n");
    for g in &report.groups {
        for (i, r) in g.runs.iter().enumerate() {
            for &(step, cov) in &r.series {
                let _ = writeln!(long, "{},{i},{step},{cov}", g.policy);
            }
        }
        for p in g.series_summary() {
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{}",
                g.policy, p.step, p.n, p.mean, p.sd, p.ci_lo, p.ci_hi
            );
        }
    }
    std::fs::write(path, long).map_err(|e| Error::io(path, e))?;
    let sp = summary_path(path);
    std::fs::write(&sp, summary).map_err(|e| Error::io(&sp, e))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Half-width `1.96 * sd / sqrt(n)`.
pub fn ci_half_width(sd: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    Z95 * sd / (n as f64).sqrt()
}

/// Pooled two-proportion z-test of `k1/n1` against `k2/n2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionTest {
    pub p1: f64,
    pub p2: f64,
    pub z: f64,
    /// P(Z >= z): evidence that the first proportion is larger.
    pub p_greater: f64,
    /// Two-sided p-value.
    pub p_two_sided: f64,
}

pub fn proportion_test(k1: usize, n1: usize, k2: usize, n2: usize) -> ProportionTest {
    assert!(n1 > 0 && n2 > 0 && k1 <= n1 && k2 <= n2);
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = if se > 0.0 { (p1 - p2) / se } else { 0.0 };
    let normal = Normal::standard();
    let upper = 1.0 - normal.cdf(z);
    ProportionTest {
        p1,
        p2,
        z,
        p_greater: upper,
        p_two_sided: (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0),
    }
}

/// Compare the breakthrough rates of two groups at `threshold`.
pub fn compare_breakthroughs(a: &PolicyGroup, b: &PolicyGroup, threshold: u64) -> ProportionTest {
    proportion_test(a.breakthroughs(threshold), a.runs.len(), b.breakthroughs(threshold), b.runs.len())
}

/// Pearson goodness-of-fit of `observed` counts against `probs`.
/// Returns `(statistic, p_value)` with `len - 1` degrees of freedom;
/// categories with zero probability must have zero counts.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut df = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            if o > 0 {
                return (f64::INFINITY, 0.0);
            }
            continue;
        }
        let e = n as f64 * p;
        stat += (o as f64 - e).powi(2) / e;
        df += 1;
    }
    if df < 2 {
        return (stat, 1.0);
    }
    let dist = ChiSquared::new((df - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}
