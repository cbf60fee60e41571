//! Synthetic instrumented programs with known coverage topologies.
//!
//! Each target reports the edges it walked and the comparisons it made,
//! which is exactly what compile-time instrumentation would hand a real
//! fuzzer. Execution is deterministic and side-effect free.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::coverage::{EdgeId, ExecutionFeedback, Verdict};
use crate::mutators::{hex_decode, CmpPair, MutatorAction};
use crate::Error;

pub trait TargetProgram: Send + Sync {
    fn name(&self) -> &str;

    /// Every reported edge id is below this ceiling.
    fn total_edges(&self) -> u32;

    /// Run the program on `input`, appending to a cleared `fb`.
    fn execute(&self, input: &[u8], fb: &mut ExecutionFeedback);

    /// Seed the corpus with this input instead of the default single byte.
    fn initial_input(&self) -> Option<Vec<u8>> {
        None
    }
}

/// Magic-prefix plateau.
///
/// Edge `i` (for `i < magic.len()`) is granted when the first `i + 1` bytes
/// match the magic. Edge `magic.len()` is the entry edge. Once the whole
/// magic matches, the `depth` cascade edges `magic.len() + 1 ..= magic.len()
/// + depth` are all taken.
#[derive(Clone, Debug)]
pub struct MagicHeader {
    name: String,
    magic: Vec<u8>,
    depth: u32,
    crash_on_match: bool,
}

impl MagicHeader {
    pub fn new(depth: u32, magic: &[u8]) -> Result<Self, Error> {
        if depth == 0 || magic.is_empty() {
            return Err(Error::Config(
                "magic_header needs depth >= 1 and a non-empty magic".into(),
            ));
        }
        Ok(Self {
            name: "magic_header".into(),
            magic: magic.to_vec(),
            depth,
            crash_on_match: false,
        })
    }

    /// Report a crash verdict whenever the full magic matches.
    pub fn crashing(mut self) -> Self {
        self.crash_on_match = true;
        self
    }

    pub fn magic(&self) -> &[u8] {
        &self.magic
    }

    pub fn entry_edge(&self) -> EdgeId {
        self.magic.len() as EdgeId
    }

    /// Coverage needed to have broken through the plateau.
    pub fn plateau_ceiling(&self) -> u64 {
        self.magic.len() as u64 + 1
    }
}

impl TargetProgram for MagicHeader {
    fn name(&self) -> &str {
        &self.name
    }

    fn total_edges(&self) -> u32 {
        self.magic.len() as u32 + self.depth + 1
    }

    fn execute(&self, input: &[u8], fb: &mut ExecutionFeedback) {
        let n = self.magic.len();
        fb.hit(n as EdgeId);
        let matched = input
            .iter()
            .zip(&self.magic)
            .take_while(|(a, b)| a == b)
            .count();
        fb.edges_hit.extend(0..matched as EdgeId);
        if matched == n {
            fb.edges_hit
                .extend((n as EdgeId + 1)..=(n as EdgeId + self.depth));
            if self.crash_on_match {
                fb.verdict = Verdict::Crash;
            }
        }
    }
}

/// Chain of 32-bit equality gates.
///
/// Window `i` is `input[4i..4i + 4]` read little-endian and compared to
/// `constants[i]`; each comparison is reported as a compare event. Edge 0 is
/// the entry, edge `i + 1` is taken when gate `i` passes. The chain stops at
/// the first failed gate or when the input runs out.
#[derive(Clone, Debug)]
pub struct CompareGate {
    constants: Vec<u32>,
}

impl CompareGate {
    pub fn new(constants: &[u32]) -> Result<Self, Error> {
        if constants.is_empty() {
            return Err(Error::Config("compare_gate needs at least one constant".into()));
        }
        Ok(Self {
            constants: constants.to_vec(),
        })
    }
}

impl TargetProgram for CompareGate {
    fn name(&self) -> &str {
        "compare_gate"
    }

    fn total_edges(&self) -> u32 {
        self.constants.len() as u32 + 1
    }

    fn execute(&self, input: &[u8], fb: &mut ExecutionFeedback) {
        fb.hit(0);
        for (i, (&c, w)) in self.constants.iter().zip(input.chunks_exact(4)).enumerate() {
            let v = u32::from_le_bytes([w[0], w[1], w[2], w[3]]);
            fb.torc_events.push(CmpPair::from_u32(v, c));
            if v != c {
                break;
            }
            fb.hit(i as EdgeId + 1);
        }
    }
}

/// A target on which one class of operators is the only practical way to
/// make progress.
///
/// * `InsertByte`: a length staircase over the longest prefix of pairwise
///   distinct bytes; edge `k` needs that prefix to be at least `k` long
///   (so at most 256 steps). A fresh random byte extends it with
///   probability `(256 - k) / 256`, while runs, copies and dictionary words
///   repeat values already present and cut it short.
/// * `ChangeByte`: the corpus starts from `KEY_LEN` zero bytes and edge
///   `1 + i` needs `len == KEY_LEN` and `input[i] == key[i]`.
/// * `EraseBytes`: the corpus starts from `steps` bytes and edge `k` needs
///   `len <= steps - k`, so only shrinking operators progress.
#[derive(Clone, Debug)]
pub struct BiasedMutator {
    name: String,
    dominant: MutatorAction,
    steps: u32,
}

const KEY: [u8; 8] = *b"k3Y!x9Q_";

impl BiasedMutator {
    pub fn new(dominant: MutatorAction, steps: u32) -> Result<Self, Error> {
        if !matches!(
            dominant,
            MutatorAction::InsertByte | MutatorAction::ChangeByte | MutatorAction::EraseBytes
        ) {
            return Err(Error::Config(format!(
                "biased target supports InsertByte, ChangeByte or EraseBytes, not {dominant}"
            )));
        }
        if steps == 0 {
            return Err(Error::Config("biased target needs steps >= 1".into()));
        }
        Ok(Self {
            name: format!("biased:{dominant}"),
            dominant,
            steps,
        })
    }

    pub fn dominant(&self) -> MutatorAction {
        self.dominant
    }

    /// The operators that can unlock new edges on this target.
    pub fn dominant_class(&self) -> &'static [MutatorAction] {
        match self.dominant {
            MutatorAction::InsertByte => &[MutatorAction::InsertByte],
            MutatorAction::ChangeByte => {
                &[MutatorAction::ChangeByte, MutatorAction::ChangeBinaryInteger]
            }
            _ => &[MutatorAction::EraseBytes, MutatorAction::CopyPart],
        }
    }
}

impl TargetProgram for BiasedMutator {
    fn name(&self) -> &str {
        &self.name
    }

    fn total_edges(&self) -> u32 {
        match self.dominant {
            MutatorAction::InsertByte => self.steps.min(256) + 1,
            MutatorAction::ChangeByte => KEY.len() as u32 + 1,
            _ => self.steps + 1,
        }
    }

    fn execute(&self, input: &[u8], fb: &mut ExecutionFeedback) {
        fb.hit(0);
        let len = input.len() as u32;
        match self.dominant {
            MutatorAction::InsertByte => {
                let mut seen = [false; 256];
                let fresh = input
                    .iter()
                    .take_while(|&&b| !std::mem::replace(&mut seen[b as usize], true))
                    .count() as u32;
                fb.edges_hit.extend(1..=fresh.min(self.steps));
            }
            MutatorAction::ChangeByte => {
                if input.len() == KEY.len() {
                    for (i, _) in input.iter().zip(&KEY).enumerate().filter(|(_, (a, b))| a == b) {
                        fb.hit(i as EdgeId + 1);
                    }
                }
            }
            _ => {
                let shrunk = self.steps.saturating_sub(len);
                fb.edges_hit.extend(1..=shrunk);
            }
        }
    }

    fn initial_input(&self) -> Option<Vec<u8>> {
        match self.dominant {
            MutatorAction::ChangeByte => Some(vec![0; KEY.len()]),
            MutatorAction::EraseBytes => Some(vec![b'A'; self.steps as usize]),
            _ => None,
        }
    }
}

pub fn magic_header_target(depth: u32, magic: &[u8]) -> Result<Arc<dyn TargetProgram>, Error> {
    Ok(Arc::new(MagicHeader::new(depth, magic)?))
}

pub fn compare_gate_target(constants: &[u32]) -> Result<Arc<dyn TargetProgram>, Error> {
    Ok(Arc::new(CompareGate::new(constants)?))
}

pub fn biased_mutator_target(dominant: MutatorAction) -> Result<Arc<dyn TargetProgram>, Error> {
    Ok(Arc::new(BiasedMutator::new(dominant, 4096)?))
}

type Factory = Box<dyn Fn(Option<&str>) -> Result<Arc<dyn TargetProgram>, Error> + Send + Sync>;

/// Targets addressable by name, as `name` or `name:args`.
///
/// Built-ins:
/// * `magic_header[:<magic>[:<depth>]]`, default magic `FUZZ`, depth 16;
///   the magic may be given as `0x`-prefixed hex
/// * `compare_gate[:<hex>,<hex>,...]`, default `deadbeef,cafebabe`
/// * `biased:<InsertByte|ChangeByte|EraseBytes>[:<steps>]`, default steps 4096
pub struct TargetRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for TargetRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("magic_header", |args| {
            let mut parts = args.map(|a| a.splitn(2, ':')).into_iter().flatten();
            let magic = match parts.next() {
                Some(m) if m.starts_with("0x") => hex_decode(&m[2..])
                    .ok_or_else(|| Error::Config(format!("bad hex magic {m:?}")))?,
                Some(m) => m.as_bytes().to_vec(),
                None => b"FUZZ".to_vec(),
            };
            let depth = match parts.next() {
                Some(d) => d
                    .parse()
                    .map_err(|_| Error::Config(format!("bad depth {d:?}")))?,
                None => 16,
            };
            magic_header_target(depth, &magic)
        });
        r.register("compare_gate", |args| {
            let constants = match args {
                None => vec![0xDEAD_BEEF, 0xCAFE_BABE],
                Some(list) => list
                    .split(',')
                    .map(|c| {
                        u32::from_str_radix(c.trim().trim_start_matches("0x"), 16)
                            .map_err(|_| Error::Config(format!("bad constant {c:?}")))
                    })
                    .collect::<Result<_, _>>()?,
            };
            compare_gate_target(&constants)
        });
        r.register("biased", |args| {
            let args = args.ok_or_else(|| Error::Config("biased needs an operator".into()))?;
            let mut parts = args.splitn(2, ':');
            let dominant: MutatorAction = parts.next().unwrap_or_default().parse()?;
            let steps = match parts.next() {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Config(format!("bad steps {s:?}")))?,
                None => 4096,
            };
            Ok(Arc::new(BiasedMutator::new(dominant, steps)?) as Arc<dyn TargetProgram>)
        });
        r
    }
}

impl TargetRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(Option<&str>) -> Result<Arc<dyn TargetProgram>, Error> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn resolve(&self, spec: &str) -> Result<Arc<dyn TargetProgram>, Error> {
        let (name, args) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownTarget(spec.to_string()))?;
        factory(args)
    }
}

/// Resolve a target by name against the built-in registry.
pub fn by_name(spec: &str) -> Result<Arc<dyn TargetProgram>, Error> {
    TargetRegistry::default().resolve(spec)
}
