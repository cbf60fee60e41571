//! Gym-style episodic view of a running engine.
//!
//! An agent step writes one action into the ring and then waits for the
//! engine's next snapshot; meanwhile the engine keeps cycling through the
//! ring at full speed. The step reward is the coverage gained since the
//! previous agent step, so step rewards telescope to the episode's final
//! coverage.

use std::sync::Arc;
use std::time::Duration;

use crate::config::EnvConfig;
use crate::coverage;
use crate::engine::{self, AgentLink, Engine, EngineOptions, EngineThread, RunReport};
use crate::mutators::{DictionaryState, MutatorAction};
use crate::targets::TargetProgram;
use crate::Error;

/// Bit-array view of a test input: byte `j` occupies bits `8j..8j+8`,
/// most significant bit first, zero-padded to `8 * max_len` bits.
///
/// The bits are kept packed (the packed form of an MSB-first bit array is
/// the input itself), and the input length is carried alongside so inputs
/// ending in zero bytes stay distinguishable from shorter ones.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    bytes: Vec<u8>,
    max_len: usize,
    pub cov: u64,
    pub step: u64,
}

impl Observation {
    pub fn input_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Number of bits; always `8 * max_len`.
    pub fn bit_len(&self) -> usize {
        8 * self.max_len
    }

    pub fn bit(&self, i: usize) -> u8 {
        assert!(i < self.bit_len());
        match self.bytes.get(i / 8) {
            Some(b) => (b >> (7 - i % 8)) & 1,
            None => 0,
        }
    }

    /// The full dense bit vector, one element per bit.
    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.bit_len()).map(|i| self.bit(i)).collect()
    }

    /// Indices of the set bits, ascending.
    pub fn active_bits(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (j, &b) in self.bytes.iter().enumerate() {
            let mut v = b;
            while v != 0 {
                let lead = v.leading_zeros();
                out.push((8 * j) as u32 + lead);
                v &= !(0x80 >> lead);
            }
        }
        out
    }

    pub fn input(&self) -> &[u8] {
        &self.bytes
    }
}

/// Encode `input` (at most `max_len` bytes) as an observation.
pub fn encode_observation(input: &[u8], max_len: usize) -> Observation {
    assert!(input.len() <= max_len, "input longer than max_len");
    Observation {
        bytes: input.to_vec(),
        max_len,
        cov: 0,
        step: 0,
    }
}

/// Inverse of the bit layout: pack MSB-first bits back into bytes.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)) << (8 - c.len()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvMode {
    /// The engine runs on the caller's thread: each step runs exactly one
    /// snapshot period of executions. Fully reproducible.
    Deterministic,
    /// The engine runs on its own thread and never waits for the agent.
    Async,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: u64,
    pub done: bool,
}

enum Runner {
    Idle,
    Inline(Box<Engine>),
    Thread(EngineThread),
    Finished(Box<Engine>, Box<RunReport>),
}

pub struct FuzzEnv {
    target: Arc<dyn TargetProgram>,
    config: EnvConfig,
    mode: EnvMode,
    record_actions: bool,
    runner: Runner,
    link: Option<AgentLink>,
    persist: Option<DictionaryState>,
    last_cov: u64,
    last_gen: u64,
    episode_reward: u64,
    done: bool,
}

impl FuzzEnv {
    pub fn new(target: Arc<dyn TargetProgram>, config: EnvConfig, mode: EnvMode) -> Result<Self, Error> {
        config.validate()?;
        Ok(Self {
            target,
            config,
            mode,
            record_actions: false,
            runner: Runner::Idle,
            link: None,
            persist: None,
            last_cov: 0,
            last_gen: 0,
            episode_reward: 0,
            done: true,
        })
    }

    pub fn record_actions(mut self, on: bool) -> Self {
        self.record_actions = on;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut EnvConfig {
        &mut self.config
    }

    pub fn mode(&self) -> EnvMode {
        self.mode
    }

    pub fn action_space(&self) -> usize {
        MutatorAction::COUNT
    }

    pub fn observation_bits(&self) -> usize {
        8 * self.config.max_len
    }

    pub fn episode_reward(&self) -> u64 {
        self.episode_reward
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// The inline engine (deterministic mode, or after an episode ends).
    pub fn engine(&self) -> Option<&Engine> {
        match &self.runner {
            Runner::Inline(e) | Runner::Finished(e, _) => Some(e),
            _ => None,
        }
    }

    /// Report of the finished episode.
    pub fn report(&self) -> Option<&RunReport> {
        match &self.runner {
            Runner::Finished(_, r) => Some(r),
            _ => None,
        }
    }

    /// Take the engine and report of a finished episode.
    pub fn into_finished(mut self) -> Option<(Engine, RunReport)> {
        match std::mem::replace(&mut self.runner, Runner::Idle) {
            Runner::Finished(e, r) => Some((*e, *r)),
            other => {
                self.runner = other;
                None
            }
        }
    }

    fn shutdown(&mut self) {
        let runner = std::mem::replace(&mut self.runner, Runner::Idle);
        let engine = match runner {
            Runner::Idle => return,
            Runner::Inline(e) | Runner::Finished(e, _) => *e,
            Runner::Thread(t) => {
                t.stop();
                t.join().0
            }
        };
        self.persist = Some(engine.into_dictionaries());
    }

    /// Start a fresh episode; the persistent dictionary carries over.
    pub fn reset(&mut self) -> Result<Observation, Error> {
        self.shutdown();
        let options = EngineOptions {
            record_actions: self.record_actions,
            crash_dir: None,
            persist_dict: self.persist.take(),
        };
        let (engine, link) = engine::init_run(self.target.clone(), &self.config, options)?;
        let obs = encode_observation(engine.last_input(), self.config.max_len);
        self.runner = match self.mode {
            EnvMode::Deterministic => Runner::Inline(Box::new(engine)),
            EnvMode::Async => Runner::Thread(engine.spawn(self.config.budget)),
        };
        self.link = Some(link);
        self.last_cov = 0;
        self.last_gen = 0;
        self.episode_reward = 0;
        self.done = false;
        Ok(obs)
    }

    /// Queue `action` and return the next observation, the coverage gained
    /// since the previous step, and whether the budget is exhausted.
    pub fn step(&mut self, action: MutatorAction) -> Result<StepResult, Error> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let link = self.link.as_mut().expect("reset before step");
        link.ring.write(action);
        if let Runner::Inline(engine) = &mut self.runner {
            engine.run_until_snapshot(&self.config.budget);
        }
        let snap = loop {
            match link.snapshots.wait_newer(self.last_gen, Duration::from_millis(100)) {
                Some(s) => break s,
                None if matches!(self.runner, Runner::Thread(ref t) if t.is_finished()) => {
                    break link.snapshots.latest();
                }
                None => continue,
            }
        };
        let reward = coverage::reward(self.last_cov, snap.cov)?;
        let mut obs = encode_observation(&snap.input, self.config.max_len);
        obs.cov = snap.cov;
        obs.step = snap.step;
        let done = snap.done;
        self.last_gen = snap.generation;
        self.last_cov = snap.cov;
        self.episode_reward += reward;
        if done {
            self.done = true;
            self.finish();
        }
        Ok(StepResult { obs, reward, done })
    }

    fn finish(&mut self) {
        let runner = std::mem::replace(&mut self.runner, Runner::Idle);
        self.runner = match runner {
            Runner::Inline(e) => {
                let report = e.report();
                Runner::Finished(e, Box::new(report))
            }
            Runner::Thread(t) => {
                let (e, r) = t.join();
                Runner::Finished(Box::new(e), Box::new(r))
            }
            other => other,
        };
    }
}

impl Drop for FuzzEnv {
    fn drop(&mut self) {
        if let Runner::Thread(t) = std::mem::replace(&mut self.runner, Runner::Idle) {
            t.stop();
            let _ = t.join();
        }
    }
}
