//! Needle-in-a-haystack passkey tasks, metric records and the benchmark grid.

pub mod filler;

use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccd::{CapPreset, Session};
use crate::error::{Error, Result};
use crate::mempot::{MemoryPot, PotConfig};
use crate::minimodel::Model;
use crate::policies::{PolicyKind, PolicySpec};
use crate::tokenizer::ByteTokenizer;

pub use filler::{filler_bytes, filler_sentences, SENTENCES};

pub const DEFAULT_QUERY: &str = "What is the passkey?";

fn default_query() -> String {
    DEFAULT_QUERY.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NihSpec {
    /// Filler bytes, needle excluded.
    pub haystack_len: usize,
    pub depth: f64,
    pub passkey: String,
    pub filler_seed: u64,
    #[serde(default = "default_query")]
    pub query_text: String,
}

impl NihSpec {
    pub fn new(haystack_len: usize, depth: f64, passkey: impl Into<String>, filler_seed: u64) -> Self {
        Self {
            haystack_len,
            depth,
            passkey: passkey.into(),
            filler_seed,
            query_text: default_query(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.depth) {
            return Err(Error::config("depth", format!("must lie in [0, 1], got {}", self.depth)));
        }
        if self.passkey.is_empty() {
            return Err(Error::config("passkey", "must not be empty"));
        }
        Ok(())
    }

    /// Sentence that carries the passkey.
    pub fn needle(&self) -> String {
        format!("The passkey is {}. Remember it. ", self.passkey)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NihTask {
    pub context: Vec<u32>,
    /// Query followed by the answer lead-in.
    pub query: Vec<u32>,
    pub answer: String,
    /// Stream offsets of the needle sentence.
    pub needle: Range<usize>,
    /// Stream offsets of the passkey digits.
    pub passkey_span: Range<usize>,
}

/// Seeded filler with the needle inserted at the sentence boundary nearest
/// `round(depth · haystack_len)`.
pub fn gen_nih(spec: &NihSpec) -> Result<NihTask> {
    spec.validate()?;
    let bytes = filler_bytes(spec.filler_seed, spec.haystack_len);
    let (_, mut boundaries) = filler_sentences(spec.filler_seed, spec.haystack_len);
    boundaries.retain(|&b| b <= spec.haystack_len);
    boundaries.push(spec.haystack_len);
    let target = (spec.depth * spec.haystack_len as f64).round() as usize;
    let at = *boundaries
        .iter()
        .min_by_key(|&&b| (b.abs_diff(target), b))
        .expect("boundary list holds the end");
    let needle = spec.needle();
    let mut text = bytes[..at].to_vec();
    text.extend_from_slice(needle.as_bytes());
    text.extend_from_slice(&bytes[at..]);
    let digits_at = at + needle.find(&spec.passkey).expect("needle carries the passkey");
    let tok = ByteTokenizer;
    Ok(NihTask {
        context: text.iter().map(|&b| b as u32 + 1).collect(),
        query: tok.encode(&format!("\n{} The passkey is ", spec.query_text)),
        answer: spec.passkey.clone(),
        needle: at..at + needle.len(),
        passkey_span: digits_at..digits_at + spec.passkey.len(),
    })
}

/// One benchmark cell's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: String,
    #[serde(rename = "L")]
    pub context_len: usize,
    pub depth: f64,
    pub seed: u64,
    pub score: f64,
    pub cycles: usize,
    pub rope_recomputes: usize,
    pub peak_occ: usize,
    pub ms: f64,
}

impl RunMetrics {
    pub fn from_pot(policy: &str, pot: &MemoryPot, depth: f64, seed: u64, score: f64, ms: f64) -> Self {
        Self {
            policy: policy.to_owned(),
            context_len: pot.stream_len(),
            depth,
            seed,
            score,
            cycles: pot.cycle_counter(),
            rope_recomputes: pot.rope_recompute_counter(),
            peak_occ: pot.peak_occupancy(),
            ms,
        }
    }
}

/// Peak occupancy and rotary positions must both stay below capacity.
pub fn check_bounds(pot: &MemoryPot) -> Result<()> {
    if pot.peak_occupancy() > pot.capacity() {
        return Err(Error::State(format!(
            "peak occupancy {} exceeded capacity {}",
            pot.peak_occupancy(),
            pot.capacity()
        )));
    }
    if let Some(p) = pot.max_rope_position().filter(|&p| p >= pot.capacity()) {
        return Err(Error::Position {
            position: p,
            capacity: pot.capacity(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NihOutcome {
    pub metrics: RunMetrics,
    pub output: String,
    /// Whether any passkey digit survived in at least one head before decoding.
    pub needle_retained: bool,
}

/// Run one passkey task. Distillation uses the question-aware catalyst with
/// the task's query; `metrics.L` is the context length (query excluded).
pub fn eval_nih(model: &Model, policy: &PolicySpec, spec: &NihSpec, pot: &PotConfig) -> Result<NihOutcome> {
    let start = Instant::now();
    let task = gen_nih(spec)?;
    let mut pot = pot.clone();
    if policy.kind == PolicyKind::Ccd {
        pot = pot.with_catalyst(CapPreset::Q, Some(spec.query_text.clone()));
    }
    let built = policy.build(&pot)?;
    let mut session = Session::new(model, pot, built)?;
    session.consume_with(&task.context, |_, _| {})?;
    let context_len = session.pot().stream_len();
    session.consume_with(&task.query, |_, _| {})?;
    let needle_retained = session
        .pot()
        .heads()
        .any(|h| h.positions.iter().any(|p| task.passkey_span.contains(p)));
    let generated = session.generate(task.answer.len() + 4)?;
    let output = ByteTokenizer.decode(&generated);
    check_bounds(session.pot())?;
    let score = if output.contains(&task.answer) { 1.0 } else { 0.0 };
    let mut metrics = RunMetrics::from_pot(
        session.policy_id(),
        session.pot(),
        spec.depth,
        spec.filler_seed,
        score,
        start.elapsed().as_secs_f64() * 1e3,
    );
    metrics.context_len = context_len;
    Ok(NihOutcome {
        metrics,
        output,
        needle_retained,
    })
}

/// Five seeded digits.
pub fn passkey_for(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_CAFE);
    (0..5).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub policies: Vec<PolicySpec>,
    /// Haystack lengths.
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_query")]
    pub query_text: String,
}

/// Every policy × length × depth × seed cell, in parallel, sorted by
/// (policy, length, depth, seed). Cells never share state; a policy's own
/// seed is offset by the cell seed.
pub fn run_benchmark(model: &Model, pot: &PotConfig, grid: &BenchGrid) -> Result<Vec<RunMetrics>> {
    Ok(run_grid(model, pot, grid)?.into_iter().map(|o| o.metrics).collect())
}

/// [`run_benchmark`] keeping each cell's decoded output and needle retention.
pub fn run_grid(model: &Model, pot: &PotConfig, grid: &BenchGrid) -> Result<Vec<NihOutcome>> {
    let mut cells = Vec::new();
    for (pi, p) in grid.policies.iter().enumerate() {
        p.validate(pot)?;
        for &len in &grid.lengths {
            for &depth in &grid.depths {
                for &seed in &grid.seeds {
                    cells.push((pi, p, len, depth, seed));
                }
            }
        }
    }
    let mut results = cells
        .into_par_iter()
        .map(|(pi, p, len, depth, seed)| {
            let mut spec = NihSpec::new(len, depth, passkey_for(seed), seed);
            spec.query_text = grid.query_text.clone();
            let policy = p.clone().with_seed(p.seed.wrapping_add(seed));
            eval_nih(model, &policy, &spec, pot).map(|o| (pi, len, o))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| {
        let (x, y) = (&a.2.metrics, &b.2.metrics);
        x.policy
            .cmp(&y.policy)
            .then(a.1.cmp(&b.1))
            .then(x.depth.total_cmp(&y.depth))
            .then(x.seed.cmp(&y.seed))
            .then(a.0.cmp(&b.0))
    });
    Ok(results.into_iter().map(|r| r.2).collect())
}

pub fn metrics_jsonl(metrics: &[RunMetrics]) -> Result<String> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn metrics_csv(metrics: &[RunMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if metrics.is_empty() {
        w.write_record(["policy", "L", "depth", "seed", "score", "cycles", "rope_recomputes", "peak_occ", "ms"])?;
    }
    for m in metrics {
        w.serialize(m)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_metrics_jsonl(text: &str) -> Result<Vec<RunMetrics>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
