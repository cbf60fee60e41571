//! Acceptance suite. Runs every criterion in order on the calling thread and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Criteria run sequentially on purpose: criterion 7 measures throughput and
//! must not share the CPU with the others.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rlfuzz_core::agent::{
    agent_loop, double_q_target_values, gradient_check, train_step, Optimizer, OptimizerKind,
    PrioritizedReplay, TargetNetworkPair, TrainingSchedule, Transition, DEFAULT_REPLAY_CAPACITY,
};
use rlfuzz_core::bench::{chi_square_gof, compare_breakthroughs};
use rlfuzz_core::mutators::{CmpPair, DictLimits, Mutation};
use rlfuzz_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "mutator contracts", Some(Duration::from_secs(10)), mutator_contracts),
        (2, "observation encoding", Some(Duration::from_secs(1)), encoding),
        (3, "reward telescoping", Some(Duration::from_secs(30)), reward_telescoping),
        (4, "double-Q oracle", Some(Duration::from_secs(60)), double_q_oracle),
        (5, "gradient check", Some(Duration::from_secs(30)), gradient),
        (6, "prioritized replay", Some(Duration::from_secs(30)), prioritized_replay),
        (7, "non-blocking agent", None, non_blocking),
        (8, "learning effectiveness", Some(Duration::from_secs(600)), learning),
        (9, "replay fidelity", Some(Duration::from_secs(30)), replay_fidelity),
    ];
    let only: Option<u32> = std::env::var("RLFUZZ_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (n, name, limit, run) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let took = t0.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = result.pass && in_time;
        let limit_text = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
        println!(
            "criterion {n} ({name}): {} [{:.2}s{limit_text}] {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            result.detail
        );
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn is_subsequence(small: &[u8], big: &[u8]) -> bool {
    let mut it = big.iter();
    small.iter().all(|b| it.any(|c| c == b))
}

fn contains_slice(hay: &[u8], needle: &[u8]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

/// Can `out` be written as alternating slices taken from `a` and `b`, each
/// parent's slices in increasing, non-overlapping order?
fn is_interleaved_splice(out: &[u8], a: &[u8], b: &[u8]) -> bool {
    fn go(
        out: &[u8],
        a: &[u8],
        b: &[u8],
        j: usize,
        ia: usize,
        ib: usize,
        memo: &mut HashMap<(usize, usize, usize), bool>,
    ) -> bool {
        if j == out.len() {
            return true;
        }
        if let Some(&v) = memo.get(&(j, ia, ib)) {
            return v;
        }
        let mut ok = false;
        'outer: for (src, from, is_a) in [(a, ia, true), (b, ib, false)] {
            for s in from..src.len() {
                let mut l = 0;
                while j + l < out.len() && s + l < src.len() && out[j + l] == src[s + l] {
                    l += 1;
                    let next = if is_a {
                        go(out, a, b, j + l, s + l, ib, memo)
                    } else {
                        go(out, a, b, j + l, ia, s + l, memo)
                    };
                    if next {
                        ok = true;
                        break 'outer;
                    }
                }
            }
        }
        memo.insert((j, ia, ib), ok);
        ok
    }
    go(out, a, b, 0, 0, 0, &mut HashMap::new())
}

fn differing(a: &[u8], b: &[u8]) -> Vec<usize> {
    (0..a.len()).filter(|&i| a[i] != b[i]).collect()
}

fn digit_run(data: &[u8], i: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (i, i);
    while lo > 0 && data[lo - 1].is_ascii_digit() {
        lo -= 1;
    }
    while hi < data.len() && data[hi].is_ascii_digit() {
        hi += 1;
    }
    (lo, hi)
}

fn dict_words(action: MutatorAction, dicts: &DictionaryState) -> Vec<Vec<u8>> {
    match action {
        MutatorAction::AddWordPersistAutoDict => dicts.persist_words().map(<[u8]>::to_vec).collect(),
        MutatorAction::AddWordTempAutoDict => dicts.temp_words().map(<[u8]>::to_vec).collect(),
        MutatorAction::AddWordFromTorc => dicts.torc_entries().map(|p| p.expected.clone()).collect(),
        _ => Vec::new(),
    }
}

/// Operator expected to run after the documented fallbacks.
fn expected_operator(action: MutatorAction, input: &[u8], dicts: &DictionaryState) -> MutatorAction {
    use MutatorAction::*;
    let len = input.len();
    let fallback = if len == 0 { InsertByte } else { ChangeByte };
    match action {
        InsertByte | InsertRepeatedBytes | CrossOver => action,
        _ if len == 0 => InsertByte,
        ShuffleBytes if len < 2 => fallback,
        ChangeAsciiInteger if !input.iter().any(u8::is_ascii_digit) => ChangeByte,
        AddWordPersistAutoDict | AddWordTempAutoDict | AddWordFromTorc
            if dict_words(action, dicts).is_empty() =>
        {
            ChangeByte
        }
        _ => action,
    }
}

/// Returns a description of the first violated postcondition.
fn check_contract(
    action: MutatorAction,
    input: &[u8],
    other: Option<&[u8]>,
    dicts: &DictionaryState,
    max_len: usize,
    m: &Mutation,
) -> Option<String> {
    use MutatorAction::*;
    let out = &m.bytes;
    let len = input.len();
    if out.len() > max_len {
        return Some(format!("length {} above max_len {max_len}", out.len()));
    }
    let expected = expected_operator(action, input, dicts);
    if m.applied != expected {
        return Some(format!("applied {} expected {expected}", m.applied));
    }
    let same_len = || (out.len() != len).then(|| format!("length {len} -> {}", out.len()));
    match m.applied {
        EraseBytes => {
            if out.len() + 1 != len || !is_subsequence(out, input) {
                return Some("not a single-byte erase".into());
            }
        }
        InsertByte => {
            if len < max_len {
                if out.len() != len + 1 || !is_subsequence(input, out) {
                    return Some("not a single-byte insert".into());
                }
            } else if out.len() != max_len {
                return Some("insert at capacity changed length".into());
            }
        }
        InsertRepeatedBytes => {
            let room = max_len - len;
            let n = out.len().wrapping_sub(len);
            let n_ok = if room >= 3 { (3..=128.min(room)).contains(&n) } else { n == room };
            if out.len() < len || !n_ok {
                return Some(format!("inserted {} bytes with room {room}", out.len() as i64 - len as i64));
            }
            let found = (0..=len).any(|p| {
                out[p..p + n].windows(2).all(|w| w[0] == w[1])
                    && out[..p] == input[..p]
                    && out[p + n..] == input[p..]
            });
            if !found {
                return Some("no repeated run splice reproduces the input".into());
            }
        }
        ChangeBit => {
            if let Some(e) = same_len() {
                return Some(e);
            }
            let bits: u32 = input.iter().zip(out).map(|(a, b)| (a ^ b).count_ones()).sum();
            if bits != 1 {
                return Some(format!("{bits} bits differ"));
            }
        }
        ChangeByte => {
            if let Some(e) = same_len() {
                return Some(e);
            }
            if differing(input, out).len() > 1 {
                return Some("more than one byte changed".into());
            }
        }
        ShuffleBytes => {
            if let Some(e) = same_len() {
                return Some(e);
            }
            let (mut a, mut b) = (input.to_vec(), out.clone());
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return Some("not a permutation".into());
            }
            let d = differing(input, out);
            if d.len() > 1 && d[d.len() - 1] - d[0] >= 8 {
                return Some("shuffle window wider than 8".into());
            }
        }
        ChangeAsciiInteger => {
            if let Some(e) = same_len() {
                return Some(e);
            }
            let d = differing(input, out);
            if let Some(&first) = d.first() {
                if !input[first].is_ascii_digit() {
                    return Some("changed a non-digit".into());
                }
                let (lo, hi) = digit_run(input, first);
                if d.iter().any(|&i| i < lo || i >= hi || !out[i].is_ascii_digit()) {
                    return Some("change escapes the digit run".into());
                }
            }
        }
        ChangeBinaryInteger => {
            if let Some(e) = same_len() {
                return Some(e);
            }
            let d = differing(input, out);
            if d.len() > 1 && d[d.len() - 1] - d[0] >= 8 {
                return Some("integer window wider than 8".into());
            }
        }
        CopyPart => {
            if out.is_empty() || out.len() > len || !contains_slice(input, out) {
                return Some("not a contiguous sub-range".into());
            }
        }
        CrossOver => {
            let b = other.unwrap_or(input);
            if out.len() > len.max(b.len()) {
                return Some("crossover longer than both parents".into());
            }
            if !is_interleaved_splice(out, input, b) {
                return Some("not an ordered splice of the parents".into());
            }
        }
        AddWordPersistAutoDict | AddWordTempAutoDict | AddWordFromTorc => {
            let Some(word) = &m.word else {
                return Some("dictionary op without a word".into());
            };
            if !dict_words(m.applied, dicts).contains(word) {
                return Some("word not from the operator's dictionary".into());
            }
            let found = (0..len).any(|off| {
                let end = (off + word.len()).min(max_len);
                out.len() == len.max(end)
                    && out[off..end] == word[..end - off]
                    && (0..len).all(|i| (off..end).contains(&i) || out[i] == input[i])
            });
            if !found {
                return Some("not an in-place word overwrite".into());
            }
        }
    }
    None
}

fn random_input(rng: &mut RngStream, max_len: usize) -> Vec<u8> {
    let cap = max_len.min(64);
    let len = match rng.below(10) {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => cap,
        _ => rng.range_inclusive(3, cap),
    };
    let ascii = rng.chance(0.3);
    (0..len)
        .map(|_| {
            if ascii {
                b"0123456789 abc-+"[rng.below(16)]
            } else {
                rng.next_u8()
            }
        })
        .collect()
}

fn mutator_contracts() -> Outcome {
    let mut full = DictionaryState::new(DictLimits::default());
    for w in [&b"IHDR"[..], b"\x00\x01\x02", b"12345", &[0xAB; 70], b"x"] {
        full.record_coverage_credit(w);
    }
    full.record_compare(&CmpPair::from_u32(0x1234, 0xDEAD_BEEF));
    full.record_compare(&CmpPair {
        observed: b"ab".to_vec(),
        expected: b"PNG".to_vec(),
    });
    let empty = DictionaryState::default();

    let mut rng = RngStream::new(0xC0FFEE);
    let triples = 13 * 1000;
    let mut violations = Vec::new();
    let mut per_op = [0u32; MutatorAction::COUNT];
    for i in 0..triples {
        let action = MutatorAction::ALL[i % MutatorAction::COUNT];
        let max_len = [4096, 64, 24, 8][rng.below(4)];
        let cfg = MutatorConfig {
            max_len,
            ..MutatorConfig::default()
        };
        let input = random_input(&mut rng, max_len);
        let other = rng.chance(0.8).then(|| random_input(&mut rng, max_len));
        let dicts = if rng.chance(0.2) { &empty } else { &full };
        let seed = rng.next_u64();
        let run = || {
            mutate(action, &input, other.as_deref(), dicts, &mut RngStream::new(seed), &cfg)
        };
        let m = run();
        let verdict = if m != run() {
            Some("non-deterministic".to_string())
        } else {
            check_contract(action, &input, other.as_deref(), dicts, max_len, &m)
        };
        per_op[action.index()] += 1;
        if let Some(v) = verdict {
            violations.push(format!("{action} on {input:?} seed {seed}: {v}"));
        }
    }
    let detail = format!(
        "{triples} triples ({} per operator), {} violations{}",
        per_op.iter().min().unwrap(),
        violations.len(),
        violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
    );
    outcome(violations.is_empty(), detail)
}

// ---------------------------------------------------------------- 2

fn encoding() -> Outcome {
    let mut rng = RngStream::new(2);
    let max_len = 4096;
    let mut bad = 0;
    for i in 0..1000 {
        let len = if i < 3 { [0, 1, max_len][i] } else { rng.below(max_len + 1) };
        let input: Vec<u8> = (0..len).map(|_| rng.next_u8()).collect();
        let obs = encode_observation(&input, max_len);
        let bits = obs.to_bits();
        if bits.len() != 32768 || obs.bit_len() != 32768 {
            bad += 1;
            continue;
        }
        // Independent MSB-first decode.
        let decoded: Vec<u8> = bits
            .chunks(8)
            .take(len)
            .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b))
            .collect();
        let padding_zero = bits[8 * len..].iter().all(|&b| b == 0);
        let ones = bits.iter().filter(|&&b| b == 1).count();
        if decoded != input || !padding_zero || ones != obs.active_bits().len() {
            bad += 1;
        }
    }
    let small = encode_observation(&[0x80, 0x01], 2).to_bits();
    let small_ok = small == [1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
    outcome(
        bad == 0 && small_ok,
        format!("1000 inputs at max_len 4096, 32768 bits each, {bad} round-trip failures"),
    )
}

// ---------------------------------------------------------------- 3

const TARGETS: [&str; 5] = [
    "magic_header",
    "magic_header:0x89504e470d0a",
    "compare_gate",
    "biased:InsertByte",
    "biased:ChangeByte",
];

fn reward_telescoping() -> Outcome {
    let mut rng = RngStream::new(3);
    let mut episodes = 0;
    let mut mismatches = Vec::new();
    let mut async_eps = 0;
    // 50 environments, two consecutive episodes each; the second episode
    // starts with the persistent dictionary of the first.
    for e in 0..50 {
        let spec = TARGETS[e % TARGETS.len()];
        let mut cfg = EnvConfig::default();
        cfg.target = spec.into();
        cfg.budget = Budget::execs(rng.range_inclusive(500, 5000) as u64);
        cfg.snapshot_s = [16, 64, 256, 1000][rng.below(4)];
        cfg.ring_k = [1, 4, 32][rng.below(3)];
        cfg.max_len = [64, 4096][rng.below(2)];
        cfg.seed = rng.next_u64();
        let mode = if e % 10 == 9 { EnvMode::Async } else { EnvMode::Deterministic };
        let mut env = FuzzEnv::new(targets::by_name(spec).unwrap(), cfg, mode).unwrap();
        for _ in 0..2 {
            env.reset().unwrap();
            let mut sum = 0u64;
            loop {
                let a = MutatorAction::ALL[rng.below(MutatorAction::COUNT)];
                let r = env.step(a).unwrap();
                sum += r.reward;
                if r.done {
                    break;
                }
            }
            let report = env.report().expect("finished episode has a report");
            let engine_cov = env.engine().unwrap().cov();
            if sum != report.final_cov || engine_cov != report.final_cov {
                mismatches.push(format!("{spec}: rewards {sum} vs final cov {}", report.final_cov));
            }
            episodes += 1;
            if mode == EnvMode::Async {
                async_eps += 1;
            }
        }
    }
    outcome(
        mismatches.is_empty() && episodes == 100,
        format!(
            "{episodes} episodes ({async_eps} async), {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Value iteration on the two-state chain: action 0 stays, action 1 moves
/// to the other state; reward 1 whenever the next state is state 1.
fn chain_oracle(gamma: f64) -> [[f64; 2]; 2] {
    let next = |s: usize, a: usize| if a == 0 { s } else { 1 - s };
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        let mut nq = [[0.0; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                let s2 = next(s, a);
                let r = if s2 == 1 { 1.0 } else { 0.0 };
                nq[s][a] = r + gamma * q[s2][0].max(q[s2][1]);
            }
        }
        q = nq;
    }
    q
}

fn double_q_oracle() -> Outcome {
    let exact = double_q_target_values(1.0, &[0.2, 0.9], &[5.0, 2.0], false, 0.5);
    let naive = 1.0 + 0.5 * [5.0f64, 2.0].iter().cloned().fold(f64::MIN, f64::max);
    let example_ok = exact == 2.0 && naive == 3.5;

    let gamma = 0.9;
    let oracle = chain_oracle(gamma);
    let dims = QNetDims {
        inputs: 8,
        embed: 8,
        units: 8,
        actions: 2,
    };
    let mut init_rng = RngStream::new(4);
    let online = QNetwork::init(dims, &mut init_rng);
    let optim = Optimizer::new(OptimizerKind::Adam, online.params().len(), 1e-3);
    let mut pair = TargetNetworkPair::new(online, 100, optim);

    let obs = |s: usize| Arc::new(encode_observation(&[if s == 0 { 0x80 } else { 0x40 }], 1));
    let zero = Arc::new(RecurrentState::zeros(dims.units));
    let mut replay = PrioritizedReplay::new(64, 0.6);
    for s in 0..2 {
        for a in 0..2 {
            let s2 = if a == 0 { s } else { 1 - s };
            replay.push(Transition {
                obs: obs(s),
                state: zero.clone(),
                action: MutatorAction::from_index(a).unwrap(),
                reward: if s2 == 1 { 1.0 } else { 0.0 },
                next_obs: obs(s2),
                next_state: zero.clone(),
                done: false,
            });
        }
    }
    let learned = |pair: &TargetNetworkPair| -> [[f64; 2]; 2] {
        let mut q = [[0.0; 2]; 2];
        for (s, row) in q.iter_mut().enumerate() {
            let v = agent::q_forward(&pair.online, &obs(s), &zero).unwrap().0;
            row.copy_from_slice(&v);
        }
        q
    };
    let max_err = |q: &[[f64; 2]; 2]| {
        (0..4)
            .map(|i| (q[i / 2][i % 2] - oracle[i / 2][i % 2]).abs())
            .fold(0.0, f64::max)
    };
    let mut rng = RngStream::new(40);
    let mut steps = 0;
    let mut q = learned(&pair);
    while steps < 100_000 {
        train_step(&mut pair, &mut replay, 4, gamma, 1.0, 1e-6, &mut rng).unwrap();
        steps += 1;
        if steps % 500 == 0 {
            q = learned(&pair);
            // Train well past the tolerance so the verdict is not marginal.
            if max_err(&q) < 1e-2 {
                break;
            }
        }
    }
    let err = max_err(&q);
    outcome(
        example_ok && err < 5e-2,
        format!(
            "example target {exact} vs naive {naive}; chain Q {:?} vs oracle {:?}, max error {err:.4} after {steps} steps",
            q.map(|r| r.map(|v| (v * 1000.0).round() / 1000.0)),
            oracle.map(|r| r.map(|v| (v * 1000.0).round() / 1000.0)),
        ),
    )
}

// ---------------------------------------------------------------- 5

fn gradient() -> Outcome {
    let dims = QNetDims {
        inputs: 32,
        embed: 8,
        units: 16,
        actions: MutatorAction::COUNT,
    };
    let mut rng = RngStream::new(5);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for _ in 0..3 {
        let net = QNetwork::init(dims, &mut rng);
        params = net.params().len();
        let inputs: Vec<Vec<u32>> = (0..3)
            .map(|_| {
                let bytes: Vec<u8> = (0..4).map(|_| rng.next_u8()).collect();
                encode_observation(&bytes, 4).active_bits()
            })
            .collect();
        let targets: Vec<Option<(usize, f64, f64)>> = (0..3)
            .map(|_| Some((rng.below(dims.actions), rng.uniform(-2.0, 2.0), rng.uniform(0.2, 1.0))))
            .collect();
        let mut initial = RecurrentState::zeros(dims.units);
        for v in initial.h.iter_mut().chain(initial.c.iter_mut()) {
            *v = rng.uniform(-0.5, 0.5);
        }
        worst = worst.max(gradient_check(&net, &inputs, &targets, &initial, 1e-5, 1e-8).unwrap());
    }
    outcome(
        worst < 1e-4,
        format!("3 networks x {params} parameters, 16 units, 3-step sequences, max relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 6

fn prioritized_replay() -> Outcome {
    let alpha = 0.6;
    let n = 50;
    let mut rng = RngStream::new(6);
    let mut replay = PrioritizedReplay::<u32>::new(n, alpha);
    let mut raw = Vec::new();
    for i in 0..n {
        let slot = replay.push(i as u32);
        let p = rng.uniform(0.1, 10.0);
        replay.set_priority(slot, p);
        raw.push(p);
    }
    let shaped: Vec<f64> = raw.iter().map(|p| p.powf(alpha)).collect();
    let total: f64 = shaped.iter().sum();
    let probs: Vec<f64> = shaped.iter().map(|s| s / total).collect();

    let draws = 100_000;
    let mut counts = vec![0u64; n];
    for _ in 0..draws {
        counts[replay.sample_index(&mut rng)] += 1;
    }
    let (chi, p) = chi_square_gof(&counts, &probs);
    // The stratified minibatch sampler must follow the same proportions.
    let mut batch_counts = vec![0u64; n];
    for _ in 0..draws / 32 {
        for i in replay.sample(32, 0.4, &mut rng).indices {
            batch_counts[i] += 1;
        }
    }
    let (chi_b, p_b) = chi_square_gof(&batch_counts, &probs);

    let mut big = PrioritizedReplay::<u64>::new(DEFAULT_REPLAY_CAPACITY, alpha);
    let mut oracle: VecDeque<u64> = VecDeque::new();
    let mut evictions_ok = true;
    for i in 0..60_000u64 {
        big.push(i);
        oracle.push_back(i);
        if oracle.len() > 50_000 {
            let gone = oracle.pop_front().unwrap();
            if gone != i - 50_000 {
                evictions_ok = false;
            }
        }
        if i % 997 == 0 {
            let mut held: Vec<u64> = (0..big.len()).map(|s| *big.get(s)).collect();
            held.sort_unstable();
            if !held.iter().eq(oracle.iter()) {
                evictions_ok = false;
            }
        }
    }
    let mut held: Vec<u64> = (0..big.len()).map(|s| *big.get(s)).collect();
    held.sort_unstable();
    let capacity_ok = DEFAULT_REPLAY_CAPACITY == 50_000
        && AgentConfig::default().replay_capacity == 50_000
        && big.len() == 50_000
        && held.first() == Some(&10_000)
        && held.iter().eq(oracle.iter());
    outcome(
        p > 0.01 && p_b > 0.01 && capacity_ok && evictions_ok,
        format!(
            "chi2 {chi:.1} (p {p:.3}) over {draws} draws, stratified chi2 {chi_b:.1} (p {p_b:.3}); capacity 50000 holds items 10000..60000 after 60000 pushes"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn non_blocking() -> Outcome {
    let window = 10.0;
    let spec = "magic_header";
    let mut cfg = EnvConfig::default();
    cfg.target = spec.into();
    cfg.budget = Budget::secs(window);
    cfg.seed = 7;

    let (mut engine, _link) =
        init_run(targets::by_name(spec).unwrap(), &cfg, EngineOptions::default()).unwrap();
    engine.set_action_source(ActionSource::Uniform);
    let base = engine.run(cfg.budget);
    let base_rate = base.executions as f64 / (base.wall_ns as f64 / 1e9);

    let mut env = FuzzEnv::new(targets::by_name(spec).unwrap(), cfg, EnvMode::Async).unwrap();
    let mut rng = RngStream::new(70);
    env.reset().unwrap();
    let mut decisions = 0;
    loop {
        std::thread::sleep(Duration::from_millis(10));
        let a = MutatorAction::ALL[rng.below(MutatorAction::COUNT)];
        decisions += 1;
        if env.step(a).unwrap().done {
            break;
        }
    }
    let slow = env.report().unwrap().clone();
    let slow_rate = slow.executions as f64 / (slow.wall_ns as f64 / 1e9);
    let ratio = slow_rate / base_rate;
    outcome(
        ratio >= 0.95,
        format!(
            "uniform {base_rate:.0} exec/s, 10 ms agent {slow_rate:.0} exec/s ({decisions} decisions), ratio {ratio:.3} (need >= 0.95)"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn learning() -> Outcome {
    let budget = Budget::execs(200_000);
    let magic_spec = "magic_header:0x89504e470d0a";
    let threshold = 7;
    let mut cfg = EnvConfig::default();
    cfg.budget = budget;
    cfg.ring_k = 1;
    cfg.snapshot_s = 1024;

    // Null self-test: the baseline against itself must not look different.
    let magic = targets::by_name(magic_spec).unwrap();
    let null = |seed: u64| {
        let mut c = cfg.clone();
        c.seed = seed;
        let mut plan = ExperimentPlan::new(magic.clone(), vec![PolicySpec::Uniform], c);
        plan.thresholds = vec![threshold];
        run_experiment(&plan).unwrap()
    };
    let (na, nb) = (null(5000), null(9000));
    let null_test = compare_breakthroughs(&na.groups[0], &nb.groups[0], threshold);
    let null_line = format!(
        "null {}/25 vs {}/25 (two-sided p {:.2})",
        na.groups[0].breakthroughs(threshold),
        nb.groups[0].breakthroughs(threshold),
        null_test.p_two_sided
    );
    if null_test.p_two_sided < 0.05 {
        return outcome(false, format!("{null_line}: null self-test failed"));
    }

    let biased = targets::by_name("biased:InsertByte").unwrap();
    let mut train_cfg = cfg.clone();
    train_cfg.target = "biased:InsertByte".into();
    train_cfg.seed = 1;
    let schedule = TrainingSchedule {
        episodes: 3,
        mode: EnvMode::Deterministic,
        checkpoint_dir: None,
        total_steps: None,
    };
    let trained = agent_loop(biased.clone(), &train_cfg, &schedule).unwrap();
    let net = Arc::new(trained.pair.online.clone());
    let policy = PolicySpec::Network {
        name: "trained".into(),
        net,
    };

    let mut eval_cfg = train_cfg.clone();
    eval_cfg.seed = 1001;
    let mut plan = ExperimentPlan::new(biased, vec![policy.clone()], eval_cfg);
    plan.repeats = 5;
    let eval = run_experiment(&plan).unwrap();
    let share = eval.groups[0].class_share(&[MutatorAction::InsertByte]);

    let mut ab_cfg = cfg.clone();
    ab_cfg.seed = 5000;
    let mut plan = ExperimentPlan::new(magic, vec![PolicySpec::Uniform, policy], ab_cfg);
    plan.thresholds = vec![threshold];
    let ab = run_experiment(&plan).unwrap();
    let (uniform, learned) = (&ab.groups[0], &ab.groups[1]);
    let test = compare_breakthroughs(learned, uniform, threshold);
    let fair = ab.budget_fair && uniform.runs.iter().chain(&learned.runs).all(|r| r.executions == 200_000);

    outcome(
        share >= 4.0 / 13.0 && test.p_greater < 0.05 && fair && learned.runs.len() == 25,
        format!(
            "{null_line}; training coverage per episode {:?}; greedy InsertByte share {share:.3} (need >= {:.3}); breakthroughs (final cov > {threshold}) trained {}/25 vs uniform {}/25, one-sided p {:.2e}; budgets matched: {fair}",
            trained.episode_cov,
            4.0 / 13.0,
            learned.breakthroughs(threshold),
            uniform.breakthroughs(threshold),
            test.p_greater
        ),
    )
}

// ---------------------------------------------------------------- 9

fn replay_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngStream::new(9);
    let mut failures = Vec::new();
    for run in 0..10 {
        let spec = TARGETS[run % TARGETS.len()];
        let target = targets::by_name(spec).unwrap();
        let mut cfg = EnvConfig::default();
        cfg.target = spec.into();
        cfg.budget = Budget::execs(20_000);
        cfg.snapshot_s = 64;
        cfg.ring_k = [1, 8, 32][run % 3];
        cfg.seed = rng.next_u64();
        let mut env = FuzzEnv::new(target.clone(), cfg.clone(), EnvMode::Deterministic)
            .unwrap()
            .record_actions(true);
        env.reset().unwrap();
        loop {
            let a = MutatorAction::ALL[rng.below(MutatorAction::COUNT)];
            if env.step(a).unwrap().done {
                break;
            }
        }
        let original = env.report().unwrap().clone();
        let engine = env.engine().unwrap();
        let corpus: Vec<Vec<u8>> = engine.corpus().entries().iter().map(|e| e.bytes.clone()).collect();
        let path = dir.path().join(format!("actions-{run}.bin"));
        engine.action_log().unwrap().write(&path).unwrap();

        let log = ActionLog::read(&path).unwrap();
        if log.config_hash != cfg.hash() || log.seed != cfg.seed {
            failures.push(format!("run {run}: log header mismatch"));
            continue;
        }
        let (mut replay, _link) = init_run(target, &cfg, EngineOptions::default()).unwrap();
        replay.set_action_source(ActionSource::Scripted {
            actions: log.actions,
            pos: 0,
        });
        let again = replay.run(cfg.budget);
        let corpus_again: Vec<Vec<u8>> = replay.corpus().entries().iter().map(|e| e.bytes.clone()).collect();
        if again.final_cov != original.final_cov
            || again.corpus_digest != original.corpus_digest
            || corpus_again != corpus
            || again.executions != original.executions
        {
            failures.push(format!(
                "run {run} ({spec}): cov {} vs {}, digest {} vs {}",
                original.final_cov, again.final_cov, original.corpus_digest, again.corpus_digest
            ));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10 recorded runs x 20000 executions replayed, {} mismatches{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}
