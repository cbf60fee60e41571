//! Epsilon-greedy recurrent Q-learning agent with Double-Q targets and
//! prioritized replay.

pub mod checkpoint;
mod network;
mod replay;

pub use network::{Adam, Optimizer, OptimizerKind, QNetDims, QNetwork, RecurrentState, StepCache};
pub use replay::{Batch, PrioritizedReplay, SumTree, Transition, DEFAULT_REPLAY_CAPACITY};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::EnvConfig;
use crate::env::{EnvMode, FuzzEnv, Observation};
use crate::mutators::MutatorAction;
use crate::rng::RngStream;
use crate::targets::TargetProgram;
use crate::Error;

/// Learning hyperparameters. Part of the versioned run config.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch: usize,
    /// Training steps between target-network refreshes.
    pub tau: u64,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all training steps over which epsilon anneals.
    pub eps_fraction: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub embed: usize,
    pub units: usize,
    pub replay_capacity: usize,
    pub priority_eps: f64,
    /// Clip rewards to this value before learning; 0 disables clipping.
    pub reward_clip: f64,
    pub episodes: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch: 32,
            tau: 1000,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.5,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            embed: 64,
            units: 64,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            priority_eps: 1e-6,
            reward_clip: 0.0,
            episodes: 3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(format!("agent.{m}")));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.batch == 0 || self.tau == 0 || self.replay_capacity == 0 {
            return bad("batch, tau and replay_capacity must be > 0");
        }
        if self.embed == 0 || self.units == 0 || self.episodes == 0 {
            return bad("embed, units and episodes must be > 0");
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("agent.{name} must be in [0, 1]")));
            }
        }
        if !(self.lr > 0.0 && self.priority_eps > 0.0 && self.reward_clip >= 0.0) {
            return bad("lr and priority_eps must be > 0, reward_clip >= 0");
        }
        Ok(())
    }

    pub(crate) fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("gamma", self.gamma.to_string()),
            ("batch", self.batch.to_string()),
            ("tau", self.tau.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("eps_start", self.eps_start.to_string()),
            ("eps_end", self.eps_end.to_string()),
            ("eps_fraction", self.eps_fraction.to_string()),
            ("lr", self.lr.to_string()),
            ("optimizer", self.optimizer.name().to_string()),
            ("embed", self.embed.to_string()),
            ("units", self.units.to_string()),
            ("replay_capacity", self.replay_capacity.to_string()),
            ("priority_eps", self.priority_eps.to_string()),
            ("reward_clip", self.reward_clip.to_string()),
            ("episodes", self.episodes.to_string()),
        ]
    }

    pub(crate) fn set(&mut self, key: &str, v: &str) -> Result<(), Error> {
        fn p<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, Error> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for agent.{k}")))
        }
        match key {
            "gamma" => self.gamma = p(key, v)?,
            "batch" => self.batch = p(key, v)?,
            "tau" => self.tau = p(key, v)?,
            "alpha" => self.alpha = p(key, v)?,
            "beta_start" => self.beta_start = p(key, v)?,
            "beta_end" => self.beta_end = p(key, v)?,
            "eps_start" => self.eps_start = p(key, v)?,
            "eps_end" => self.eps_end = p(key, v)?,
            "eps_fraction" => self.eps_fraction = p(key, v)?,
            "lr" => self.lr = p(key, v)?,
            "optimizer" => self.optimizer = p(key, v)?,
            "embed" => self.embed = p(key, v)?,
            "units" => self.units = p(key, v)?,
            "replay_capacity" => self.replay_capacity = p(key, v)?,
            "priority_eps" => self.priority_eps = p(key, v)?,
            "reward_clip" => self.reward_clip = p(key, v)?,
            "episodes" => self.episodes = p(key, v)?,
            _ => return Err(Error::Config(format!("unknown key agent.{key}"))),
        }
        Ok(())
    }

    pub fn dims(&self, max_len: usize, actions: usize) -> QNetDims {
        QNetDims {
            inputs: 8 * max_len,
            embed: self.embed,
            units: self.units,
            actions,
        }
    }
}

fn check_obs(net: &QNetwork, obs: &Observation) -> Result<(), Error> {
    if obs.bit_len() != net.dims().inputs {
        return Err(Error::Dimension(format!(
            "observation of {} bits for a network with {} inputs",
            obs.bit_len(),
            net.dims().inputs
        )));
    }
    Ok(())
}

/// Q-values for `obs` and the recurrent state after it.
pub fn q_forward(
    net: &QNetwork,
    obs: &Observation,
    state: &RecurrentState,
) -> Result<(Vec<f64>, RecurrentState), Error> {
    check_obs(net, obs)?;
    let cache = net.forward(&obs.active_bits(), state)?;
    Ok((cache.q, cache.state))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Double-Q bootstrap target from the online and target networks' values
/// at the next state: the online values pick the action, the target values
/// score it.
pub fn double_q_target_values(
    reward: f64,
    q_online_next: &[f64],
    q_target_next: &[f64],
    done: bool,
    gamma: f64,
) -> f64 {
    if done {
        return reward;
    }
    let a = argmax(q_online_next);
    reward + gamma * q_target_next[a]
}

/// Online parameters, their stale copy, and the optimiser.
#[derive(Clone, Debug)]
pub struct TargetNetworkPair {
    pub online: QNetwork,
    pub target: QNetwork,
    pub sync_every: u64,
    train_steps: u64,
    optim: Optimizer,
}

impl TargetNetworkPair {
    pub fn new(online: QNetwork, sync_every: u64, optim: Optimizer) -> Self {
        Self {
            target: online.clone(),
            online,
            sync_every,
            train_steps: 0,
            optim,
        }
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn double_q_target(
        &self,
        reward: f64,
        next_obs: &Observation,
        next_state: &RecurrentState,
        done: bool,
        gamma: f64,
    ) -> Result<f64, Error> {
        if done {
            return Ok(reward);
        }
        let (qo, _) = q_forward(&self.online, next_obs, next_state)?;
        let (qt, _) = q_forward(&self.target, next_obs, next_state)?;
        Ok(double_q_target_values(reward, &qo, &qt, false, gamma))
    }
}

/// One optimisation step on a prioritized minibatch.
///
/// Loss is the importance-weighted mean of `0.5 * td^2`; replayed items get
/// the new priority `|td| + priority_eps`.
pub fn train_step(
    pair: &mut TargetNetworkPair,
    replay: &mut PrioritizedReplay,
    batch: usize,
    gamma: f64,
    beta: f64,
    priority_eps: f64,
    rng: &mut RngStream,
) -> Result<f64, Error> {
    if replay.len() < batch {
        return Err(Error::Config(format!(
            "replay holds {} transitions, batch needs {batch}",
            replay.len()
        )));
    }
    let sample = replay.sample(batch, beta, rng);
    let mut grad = vec![0.0; pair.online.params().len()];
    let units = pair.online.dims().units;
    let zeros = vec![0.0; units];
    let mut loss = 0.0;
    let mut new_priorities = Vec::with_capacity(batch);
    for (&i, &w) in sample.indices.iter().zip(&sample.weights) {
        let t = replay.get(i);
        check_obs(&pair.online, &t.obs)?;
        let y = pair.double_q_target(t.reward, &t.next_obs, &t.next_state, t.done, gamma)?;
        let cache = pair.online.forward(&t.obs.active_bits(), &t.state)?;
        let a = t.action.index();
        if a >= cache.q.len() {
            return Err(Error::Dimension(format!("action {a} out of range")));
        }
        let td = cache.q[a] - y;
        loss += 0.5 * w * td * td / batch as f64;
        let mut dq = vec![0.0; cache.q.len()];
        dq[a] = w * td / batch as f64;
        pair.online.backward_step(&cache, &dq, &zeros, &zeros, &mut grad);
        new_priorities.push((i, td.abs() + priority_eps));
    }
    pair.optim.step(pair.online.params_mut(), &grad);
    for (i, p) in new_priorities {
        replay.set_priority(i, p);
    }
    pair.train_steps += 1;
    if pair.train_steps.is_multiple_of(pair.sync_every) {
        pair.target = pair.online.clone();
    }
    Ok(loss)
}

/// Epsilon-greedy action from precomputed Q-values.
pub fn select_from_q(q: &[f64], epsilon: f64, rng: &mut RngStream) -> usize {
    if epsilon > 0.0 && rng.chance(epsilon) {
        rng.below(q.len())
    } else {
        argmax(q)
    }
}

/// Epsilon-greedy action; also returns the state after `obs`.
pub fn select_action(
    net: &QNetwork,
    obs: &Observation,
    state: &RecurrentState,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<(MutatorAction, RecurrentState), Error> {
    let (q, next) = q_forward(net, obs, state)?;
    let i = select_from_q(&q, epsilon, rng);
    let action = MutatorAction::from_index(i)
        .ok_or_else(|| Error::Dimension(format!("network has {} outputs", q.len())))?;
    Ok((action, next))
}

/// Central finite differences against the analytic gradient of a
/// sequence loss. Returns the max over parameters of
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(
    net: &QNetwork,
    inputs: &[Vec<u32>],
    targets: &[Option<(usize, f64, f64)>],
    initial: &RecurrentState,
    step: f64,
    floor: f64,
) -> Result<f64, Error> {
    let mut grad = vec![0.0; net.params().len()];
    net.sequence_loss_grad(inputs, targets, initial, &mut grad)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + step;
        let up = probe.sequence_loss(inputs, targets, initial)?;
        probe.params_mut()[i] = orig - step;
        let down = probe.sequence_loss(inputs, targets, initial)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = grad[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Linear interpolation from `start` to `end` over `span` steps, then flat.
pub fn linear_schedule(start: f64, end: f64, span: u64, step: u64) -> f64 {
    if span == 0 || step >= span {
        return end;
    }
    start + (end - start) * step as f64 / span as f64
}

/// A network plus its running recurrent state: the acting half of an agent.
#[derive(Clone, Debug)]
pub struct QPolicy {
    pub net: QNetwork,
    pub epsilon: f64,
    state: RecurrentState,
    rng: RngStream,
}

impl QPolicy {
    pub fn new(net: QNetwork, epsilon: f64, seed: u64) -> Self {
        let state = net.zero_state();
        Self {
            net,
            epsilon,
            state,
            rng: RngStream::derive(seed, 0xAC7),
        }
    }

    /// Forget the recurrent state at an episode boundary.
    pub fn reset(&mut self) {
        self.state = self.net.zero_state();
    }

    pub fn state(&self) -> &RecurrentState {
        &self.state
    }

    pub fn act(&mut self, obs: &Observation) -> Result<MutatorAction, Error> {
        let (a, next) = select_action(&self.net, obs, &self.state, self.epsilon, &mut self.rng)?;
        self.state = next;
        Ok(a)
    }
}

#[derive(Clone, Debug)]
pub struct TrainingLogRow {
    pub episode: u32,
    pub step: u64,
    pub epsilon: f64,
    pub loss: f64,
    pub cov: u64,
}

#[derive(Clone, Debug)]
pub struct TrainingSchedule {
    pub episodes: u32,
    pub mode: EnvMode,
    /// Write `episode-<n>.ckpt` here after each episode.
    pub checkpoint_dir: Option<PathBuf>,
    /// Agent steps over which epsilon and beta anneal; derived from the
    /// execution budget when absent.
    pub total_steps: Option<u64>,
}

pub struct TrainOutcome {
    pub pair: TargetNetworkPair,
    pub checkpoints: Vec<PathBuf>,
    /// Weights at the end of every episode.
    pub episode_weights: Vec<QNetwork>,
    pub log: Vec<TrainingLogRow>,
    pub replay_len: usize,
    pub agent_steps: u64,
    /// Final coverage per episode.
    pub episode_cov: Vec<u64>,
}

impl TrainOutcome {
    pub fn write_log(&self, path: &Path) -> Result<(), Error> {
        let mut s = String::from("episode,step,epsilon,loss,cov\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{},{:.6},{:.6e},{}", r.episode, r.step, r.epsilon, r.loss, r.cov);
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// The episodic training loop: reset, then observe / act / step / store /
/// learn until the budget runs out, for every scheduled episode.
pub fn agent_loop(
    target: Arc<dyn TargetProgram>,
    config: &EnvConfig,
    schedule: &TrainingSchedule,
) -> Result<TrainOutcome, Error> {
    let hp = config.agent.clone();
    hp.validate()?;
    let dims = hp.dims(config.max_len, MutatorAction::COUNT);
    let mut init_rng = RngStream::derive(config.seed, 0x1417);
    let online = QNetwork::init(dims, &mut init_rng);
    let optim = Optimizer::new(hp.optimizer, online.params().len(), hp.lr);
    let mut pair = TargetNetworkPair::new(online, hp.tau, optim);
    let mut replay = PrioritizedReplay::new(hp.replay_capacity, hp.alpha);
    let mut rng = RngStream::derive(config.seed, 0x7EA1);

    let total_steps = schedule.total_steps.unwrap_or_else(|| {
        let per_episode = config
            .budget
            .execs
            .map(|n| n.div_ceil(config.snapshot_s))
            .unwrap_or(10_000);
        per_episode * schedule.episodes as u64
    });
    let eps_span = (total_steps as f64 * hp.eps_fraction) as u64;

    if let Some(dir) = &schedule.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut env = FuzzEnv::new(target, config.clone(), schedule.mode)?;
    let mut out = TrainOutcome {
        pair: pair.clone(),
        checkpoints: Vec::new(),
        episode_weights: Vec::new(),
        log: Vec::new(),
        replay_len: 0,
        agent_steps: 0,
        episode_cov: Vec::new(),
    };
    let mut global_step = 0u64;
    for episode in 0..schedule.episodes {
        let mut obs = Arc::new(env.reset()?);
        let mut state = Arc::new(pair.online.zero_state());
        loop {
            let epsilon = linear_schedule(hp.eps_start, hp.eps_end, eps_span, global_step);
            let beta = linear_schedule(hp.beta_start, hp.beta_end, total_steps, global_step);
            let (q, next_state) = q_forward(&pair.online, &obs, &state)?;
            let a = select_from_q(&q, epsilon, &mut rng);
            let action = MutatorAction::ALL[a];
            let result = env.step(action)?;
            let mut reward = result.reward as f64;
            if hp.reward_clip > 0.0 {
                reward = reward.min(hp.reward_clip);
            }
            let next_obs = Arc::new(result.obs);
            let next_state = Arc::new(next_state);
            replay.push(Transition {
                obs: obs.clone(),
                state: state.clone(),
                action,
                reward,
                next_obs: next_obs.clone(),
                next_state: next_state.clone(),
                done: result.done,
            });
            let loss = if replay.len() >= hp.batch {
                train_step(
                    &mut pair,
                    &mut replay,
                    hp.batch,
                    hp.gamma,
                    beta,
                    hp.priority_eps,
                    &mut rng,
                )?
            } else {
                0.0
            };
            global_step += 1;
            out.log.push(TrainingLogRow {
                episode,
                step: global_step,
                epsilon,
                loss,
                cov: next_obs.cov,
            });
            obs = next_obs;
            state = next_state;
            if result.done {
                out.episode_cov.push(obs.cov);
                break;
            }
        }
        log::info!(
            "episode {episode}: cov {} after {global_step} agent steps",
            obs.cov
        );
        if let Some(dir) = &schedule.checkpoint_dir {
            let path = dir.join(format!("episode-{}.ckpt", episode + 1));
            checkpoint::save(&pair.online, &path)?;
            out.checkpoints.push(path);
        }
        out.episode_weights.push(pair.online.clone());
    }
    out.replay_len = replay.len();
    out.agent_steps = global_step;
    out.pair = pair;
    Ok(out)
}
