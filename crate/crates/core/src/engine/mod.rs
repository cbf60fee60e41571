//! The fuzzing loop: pick a corpus entry, take the next action from the
//! ring, mutate, execute, absorb coverage, keep the input if it found
//! anything new.
//!
//! The engine is the sole owner of the corpus, the coverage map, the
//! dictionaries and target execution. It talks to the agent only through
//! the [`ActionRing`] (agent writes, engine reads) and the snapshot cell
//! (engine writes, agent reads), neither of which ever blocks the engine.

mod corpus;
mod report;
mod ring;
mod snapshot;

pub use corpus::{entry_file_name, Corpus, CorpusEntry};
pub use report::{ActionLog, RunReport, RunSummary, SeriesRow};
pub use ring::{action_ring, ActionRing, RingReader, RingWriter};
pub use snapshot::{snapshot_cell, SnapshotPublisher, SnapshotReader, StateSnapshot};

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crate::config::{Budget, EnvConfig};
use crate::coverage::{CoverageMap, ExecutionFeedback, Verdict};
use crate::mutators::{self, DictionaryState, MutatorAction, MutatorConfig};
use crate::rng::RngStream;
use crate::targets::TargetProgram;
use crate::Error;

/// Where the engine gets its next action from.
#[derive(Debug)]
pub enum ActionSource {
    /// Cycle over the shared ring written by the agent.
    Ring(RingReader),
    /// Hard-wired uniform random choice, no agent involved.
    Uniform,
    /// A fixed sequence, repeated cyclically. Used for replay.
    Scripted {
        actions: Vec<MutatorAction>,
        pos: usize,
    },
}

/// Engine-side knobs that are not part of the versioned config.
#[derive(Clone, Debug, Default)]
pub struct EngineOptions {
    /// Keep the per-execution action log (one byte per execution).
    pub record_actions: bool,
    /// Save crashing inputs here as `crash-<seed>-<step>`.
    pub crash_dir: Option<PathBuf>,
    /// Preloaded persistent dictionary, e.g. from a previous episode.
    pub persist_dict: Option<DictionaryState>,
}

/// The agent's end of the shared cells.
pub struct AgentLink {
    pub ring: RingWriter,
    pub snapshots: SnapshotReader,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub action: MutatorAction,
    pub new_edges: u64,
    pub cov: u64,
}

pub struct Engine {
    target: Arc<dyn TargetProgram>,
    config_hash: String,
    seed: u64,
    budget: Budget,
    snapshot_s: u64,
    mcfg: MutatorConfig,
    corpus: Corpus,
    coverage: CoverageMap,
    dicts: DictionaryState,
    mutate_rng: RngStream,
    schedule_rng: RngStream,
    policy_rng: RngStream,
    source: ActionSource,
    publisher: SnapshotPublisher,
    fb: ExecutionFeedback,
    last_input: Vec<u8>,
    step: u64,
    start: Instant,
    selected: [u64; MutatorAction::COUNT],
    credited: [u64; MutatorAction::COUNT],
    crashes: u64,
    series: Vec<SeriesRow>,
    action_log: Option<Vec<MutatorAction>>,
    crash_dir: Option<PathBuf>,
}

const STREAM_MUTATE: u64 = 0;
const STREAM_SCHEDULE: u64 = 1;
const STREAM_POLICY: u64 = 2;

/// Set up a fresh run: a one-entry corpus (a single byte unless the target
/// asks for a different seed input), an empty coverage map, empty
/// dictionaries and a ring of uniformly drawn actions.
///
/// The seed input is not executed until the first [`Engine::fuzz_once`].
pub fn init_run(
    target: Arc<dyn TargetProgram>,
    config: &EnvConfig,
    options: EngineOptions,
) -> Result<(Engine, AgentLink), Error> {
    config.validate()?;
    let seed = config.seed;
    let mut policy_rng = RngStream::derive(seed, STREAM_POLICY);
    let initial: Vec<MutatorAction> = (0..config.ring_k)
        .map(|_| MutatorAction::ALL[policy_rng.below(MutatorAction::COUNT)])
        .collect();
    let (writer, reader) = action_ring(&initial);
    let (publisher, snapshots) = snapshot_cell();

    let mut schedule_rng = RngStream::derive(seed, STREAM_SCHEDULE);
    let seed_input = match target.initial_input() {
        Some(mut bytes) => {
            bytes.truncate(config.max_len);
            bytes
        }
        None => vec![schedule_rng.next_u8()],
    };
    let mut corpus = Corpus::default();
    corpus.push(CorpusEntry {
        bytes: seed_input.clone(),
        step: 0,
        action: None,
        cov: 0,
    });

    let mut dicts = options.persist_dict.unwrap_or_default();
    dicts.reset_episode();

    let engine = Engine {
        target,
        config_hash: config.hash(),
        seed,
        budget: config.budget,
        snapshot_s: config.snapshot_s,
        mcfg: MutatorConfig {
            max_len: config.max_len,
            ..MutatorConfig::default()
        },
        corpus,
        coverage: CoverageMap::new(),
        dicts,
        mutate_rng: RngStream::derive(seed, STREAM_MUTATE),
        schedule_rng,
        policy_rng,
        source: ActionSource::Ring(reader),
        publisher,
        fb: ExecutionFeedback::default(),
        last_input: seed_input,
        step: 0,
        start: Instant::now(),
        selected: [0; MutatorAction::COUNT],
        credited: [0; MutatorAction::COUNT],
        crashes: 0,
        series: Vec::new(),
        action_log: options.record_actions.then(Vec::new),
        crash_dir: options.crash_dir,
    };
    Ok((
        engine,
        AgentLink {
            ring: writer,
            snapshots,
        },
    ))
}

impl Engine {
    pub fn set_action_source(&mut self, source: ActionSource) {
        self.source = source;
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn coverage(&self) -> &CoverageMap {
        &self.coverage
    }

    pub fn dictionaries(&self) -> &DictionaryState {
        &self.dicts
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn cov(&self) -> u64 {
        self.coverage.count()
    }

    pub fn target(&self) -> &Arc<dyn TargetProgram> {
        &self.target
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn snapshot_period(&self) -> u64 {
        self.snapshot_s
    }

    pub fn last_input(&self) -> &[u8] {
        &self.last_input
    }

    pub fn budget_exhausted(&self, budget: &Budget) -> bool {
        if budget.execs.is_some_and(|n| self.step >= n) {
            return true;
        }
        // Checking the clock every execution would dominate cheap targets.
        budget
            .secs
            .is_some_and(|s| self.step.is_multiple_of(256) && self.start.elapsed().as_secs_f64() >= s)
    }

    #[inline]
    fn next_action(&mut self) -> MutatorAction {
        match &mut self.source {
            ActionSource::Ring(r) => r.next_action(),
            // Own stream, so a scripted replay of these actions sees the
            // same mutation and scheduling draws.
            ActionSource::Uniform => MutatorAction::ALL[self.policy_rng.below(MutatorAction::COUNT)],
            ActionSource::Scripted { actions, pos } => {
                let a = actions[*pos % actions.len()];
                *pos += 1;
                a
            }
        }
    }

    /// One iteration of the fuzzing loop.
    pub fn fuzz_once(&mut self) -> StepOutcome {
        let action = self.next_action();
        let n = self.corpus.len();
        let idx = self.schedule_rng.below(n);
        let other = (action == MutatorAction::CrossOver).then(|| self.schedule_rng.below(n));
        let m = mutators::mutate(
            action,
            &self.corpus.get(idx).bytes,
            other.map(|o| self.corpus.get(o).bytes.as_slice()),
            &self.dicts,
            &mut self.mutate_rng,
            &self.mcfg,
        );

        self.fb.clear();
        self.target.execute(&m.bytes, &mut self.fb);
        for ev in &self.fb.torc_events {
            self.dicts.record_compare(ev);
        }
        let new_edges = self.coverage.absorb(&self.fb);
        let cov = self.coverage.count();
        let step = self.step;
        self.step += 1;
        self.selected[action.index()] += 1;
        if let Some(log) = &mut self.action_log {
            log.push(action);
        }
        if self.fb.verdict == Verdict::Crash {
            self.on_crash(&m.bytes, step);
        }
        if new_edges > 0 {
            self.credited[action.index()] += 1;
            let credit_word = matches!(
                m.applied,
                MutatorAction::CrossOver
                    | MutatorAction::AddWordPersistAutoDict
                    | MutatorAction::AddWordTempAutoDict
                    | MutatorAction::AddWordFromTorc
            );
            if let (true, Some(w)) = (credit_word, &m.word) {
                self.dicts.record_coverage_credit(w);
            }
            self.corpus.push(CorpusEntry {
                bytes: m.bytes.clone(),
                step: self.step,
                action: Some(action),
                cov,
            });
            self.series.push(SeriesRow {
                step: self.step,
                wallclock_ns: self.start.elapsed().as_nanos() as u64,
                cov,
                action,
                new_edges,
            });
        }
        self.last_input = m.bytes;
        if self.step.is_multiple_of(self.snapshot_s) {
            self.publish(false);
        }
        StepOutcome {
            action,
            new_edges,
            cov,
        }
    }

    fn on_crash(&mut self, input: &[u8], step: u64) {
        self.crashes += 1;
        log::warn!("target crashed at step {step}");
        if let Some(dir) = &self.crash_dir {
            let path = dir.join(format!("crash-{}-{step}", self.seed));
            let res = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, input));
            if let Err(e) = res {
                log::error!("could not save crash input {}: {e}", path.display());
            }
        }
    }

    fn publish(&mut self, done: bool) {
        let (input, cov, step) = (&self.last_input, self.coverage.count(), self.step);
        let wallclock = self.start.elapsed();
        self.publisher.publish(|s| {
            s.input.clear();
            s.input.extend_from_slice(input);
            s.cov = cov;
            s.step = step;
            s.wallclock = wallclock;
            s.done = done;
        });
    }

    /// Run until the next snapshot is published or the budget runs out.
    /// Returns true when the budget is exhausted.
    pub fn run_until_snapshot(&mut self, budget: &Budget) -> bool {
        loop {
            if self.budget_exhausted(budget) {
                self.publish(true);
                return true;
            }
            self.fuzz_once();
            if self.step.is_multiple_of(self.snapshot_s) {
                if self.budget_exhausted(budget) {
                    self.publish(true);
                    return true;
                }
                return false;
            }
        }
    }

    /// Loop until `budget` is exhausted.
    pub fn run(&mut self, budget: Budget) -> RunReport {
        self.run_with_stop(budget, None)
    }

    fn run_with_stop(&mut self, budget: Budget, stop: Option<&AtomicBool>) -> RunReport {
        while !self.budget_exhausted(&budget) {
            self.fuzz_once();
            if stop.is_some_and(|s| self.step.is_multiple_of(256) && s.load(Ordering::Relaxed)) {
                break;
            }
        }
        self.publish(true);
        self.report()
    }

    /// Move the engine onto its own thread and run it there.
    pub fn spawn(mut self, budget: Budget) -> EngineThread {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("fuzz-engine".into())
            .spawn(move || {
                let report = self.run_with_stop(budget, Some(&flag));
                (self, report)
            })
            .expect("spawn engine thread");
        EngineThread { handle, stop }
    }

    pub fn report(&self) -> RunReport {
        let mut series = self.series.clone();
        if series.last().map(|r| r.step) != Some(self.step) && self.step > 0 {
            series.push(SeriesRow {
                step: self.step,
                wallclock_ns: self.start.elapsed().as_nanos() as u64,
                cov: self.coverage.count(),
                action: self.action_log_last().unwrap_or(MutatorAction::EraseBytes),
                new_edges: 0,
            });
        }
        RunReport {
            target: self.target.name().to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            executions: self.step,
            final_cov: self.coverage.count(),
            series,
            selected: self.selected,
            credited: self.credited,
            crashes: self.crashes,
            corpus_len: self.corpus.len() as u64,
            corpus_digest: self.corpus.digest(),
            wall_ns: self.start.elapsed().as_nanos() as u64,
        }
    }

    fn action_log_last(&self) -> Option<MutatorAction> {
        self.action_log.as_ref().and_then(|l| l.last().copied())
    }

    pub fn action_log(&self) -> Option<ActionLog> {
        self.action_log.as_ref().map(|actions| ActionLog {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            actions: actions.clone(),
        })
    }

    /// Hand the dictionaries to the next episode.
    pub fn into_dictionaries(self) -> DictionaryState {
        self.dicts
    }
}

/// An engine running on its own thread.
pub struct EngineThread {
    handle: JoinHandle<(Engine, RunReport)>,
    stop: Arc<AtomicBool>,
}

impl EngineThread {
    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }

    /// Ask the loop to stop early.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    pub fn join(self) -> (Engine, RunReport) {
        self.handle.join().expect("engine thread panicked")
    }
}
