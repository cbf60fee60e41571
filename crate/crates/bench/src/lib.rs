//! Fixtures shared by the criterion benchmarks in `benches/`.

use std::sync::Arc;

use rlfuzz_core::agent::{Optimizer, PrioritizedReplay, TargetNetworkPair, Transition};
use rlfuzz_core::mutators::{CmpPair, DictLimits};
use rlfuzz_core::{
    encode_observation, AgentConfig, DictionaryState, MutatorAction, QNetwork, RecurrentState,
    RngStream,
};

/// `n` random inputs with lengths in `[1, max_len]`.
pub fn sample_inputs(n: usize, max_len: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|_| {
            let len = rng.range_inclusive(1, max_len);
            (0..len).map(|_| rng.next_u8()).collect()
        })
        .collect()
}

/// Dictionaries with a few words in each, so dictionary operators do not
/// fall back.
pub fn populated_dicts() -> DictionaryState {
    let mut d = DictionaryState::new(DictLimits::default());
    for w in [&b"IHDR"[..], b"\x89PNG", b"12345678", b"GET /"] {
        d.record_coverage_credit(w);
    }
    d.record_compare(&CmpPair::from_u32(7, 0xDEAD_BEEF));
    d
}

/// Online/target pair at the default agent dimensions for `max_len`.
pub fn default_pair(max_len: usize, seed: u64) -> TargetNetworkPair {
    let cfg = AgentConfig::default();
    let net = QNetwork::init(cfg.dims(max_len, MutatorAction::COUNT), &mut RngStream::new(seed));
    let optim = Optimizer::new(cfg.optimizer, net.params().len(), cfg.lr);
    TargetNetworkPair::new(net, cfg.tau, optim)
}

/// Replay memory holding `n` transitions over random inputs.
pub fn filled_replay(n: usize, max_len: usize, units: usize, seed: u64) -> PrioritizedReplay {
    let cfg = AgentConfig::default();
    let mut replay = PrioritizedReplay::new(cfg.replay_capacity, cfg.alpha);
    let mut rng = RngStream::new(seed);
    let zero = Arc::new(RecurrentState::zeros(units));
    let inputs = sample_inputs(n + 1, max_len.min(256), seed);
    for i in 0..n {
        replay.push(Transition {
            obs: Arc::new(encode_observation(&inputs[i], max_len)),
            state: zero.clone(),
            action: MutatorAction::ALL[rng.below(MutatorAction::COUNT)],
            reward: rng.below(3) as f64,
            next_obs: Arc::new(encode_observation(&inputs[i + 1], max_len)),
            next_state: zero.clone(),
            done: false,
        });
    }
    replay
}
