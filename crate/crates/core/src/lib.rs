//! Coverage-guided greybox fuzzing with a learned mutation scheduler.
//!
//! The [`engine`] runs the fuzzing loop and reads its next mutation
//! operator from a small lock-free ring; the [`agent`] (a recurrent
//! Double-Q network trained from prioritized replay) writes into that ring
//! after looking at periodic engine snapshots. [`env`] wraps the pair as an
//! episodic environment and [`bench`] runs repeated-trial comparisons.

pub mod agent;
pub mod bench;
pub mod config;
pub mod coverage;
pub mod engine;
pub mod env;
mod error;
pub mod mutators;
pub mod rng;
pub mod targets;

pub use agent::{AgentConfig, QNetDims, QNetwork, QPolicy, RecurrentState};
pub use bench::{run_experiment, ExperimentPlan, ExperimentReport, PolicySpec};
pub use config::{Budget, EnvConfig};
pub use coverage::{CoverageMap, EdgeId, ExecutionFeedback, Verdict};
pub use engine::{init_run, ActionLog, ActionSource, Engine, EngineOptions, RunReport};
pub use env::{encode_observation, EnvMode, FuzzEnv, Observation, StepResult};
pub use error::{Error, Result};
pub use mutators::{mutate, DictionaryState, MutatorAction, MutatorConfig, TestInput};
pub use rng::RngStream;
pub use targets::{TargetProgram, TargetRegistry};
