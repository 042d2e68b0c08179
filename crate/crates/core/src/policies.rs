//! Cache policies sharing the pot: the distillation engine, the per-token
//! baselines it is compared against, and a random-eviction control.
//!
//! Baselines fill the pot up to their budget in one pass, then take one
//! token at a time, evicting back to the budget after each. Every eviction
//! goes through [`MemoryPot::retain`], which re-lays slots out from zero, so
//! no policy ever hands the rotary transform a position at or above |M|.

use std::cmp::Ordering;
use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccd::{top_k_by, CcdPolicy, DistillReport, ScoreSheet};
use crate::error::{Error, Result};
use crate::mempot::{MemoryPot, PotConfig};
use crate::minimodel::{Capture, ChunkOutput, Model, PerHead};

/// Hooks a [`Session`](crate::ccd::Session) calls around each intake chunk.
pub trait KvPolicy {
    fn id(&self) -> &str;

    /// Attention statistics the policy needs from each forward pass.
    fn capture(&self) -> Capture {
        Capture::none()
    }

    /// Tokens the pot may take in before `make_room` must run.
    fn intake_room(&self, pot: &MemoryPot) -> usize;

    /// Free space when `intake_room` is zero.
    fn make_room(&mut self, _model: &Model, _pot: &mut MemoryPot) -> Result<Option<DistillReport>> {
        Err(Error::State(format!("policy '{}' cannot make room", self.id())))
    }

    fn after_intake(&mut self, _pot: &mut MemoryPot, _out: &ChunkOutput) -> Result<()> {
        Ok(())
    }

    /// Offline selection of which parts of the first stream to read at all.
    fn plan_context(&mut self, _stream_len: usize) -> Option<Vec<Range<usize>>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ccd,
    Swa,
    Streaming,
    H2o,
    Tova,
    Sirllm,
    Truncate,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Ccd,
        PolicyKind::Swa,
        PolicyKind::Streaming,
        PolicyKind::H2o,
        PolicyKind::Tova,
        PolicyKind::Sirllm,
        PolicyKind::Truncate,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ccd => "ccd",
            PolicyKind::Swa => "swa",
            PolicyKind::Streaming => "streaming",
            PolicyKind::H2o => "h2o",
            PolicyKind::Tova => "tova",
            PolicyKind::Sirllm => "sirllm",
            PolicyKind::Truncate => "truncate",
            PolicyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config("policy", format!("unknown policy '{s}'")))
    }

    /// Cycle-based policies follow the distillation trigger schedule.
    pub fn is_cyclic(self) -> bool {
        matches!(self, PolicyKind::Ccd | PolicyKind::Random)
    }
}

fn default_sink() -> usize {
    4
}

fn default_heavy() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Entries kept by per-token policies; defaults to |M| - 1.
    #[serde(default)]
    pub budget: Option<usize>,
    /// Leading tokens kept by `streaming`.
    #[serde(default = "default_sink")]
    pub sink_count: usize,
    /// Accumulated-attention slots kept by `h2o`; the rest of the budget is recent.
    #[serde(default = "default_heavy")]
    pub heavy_count: usize,
    /// Head tokens kept by `truncate`; defaults to ceil(budget / 2).
    #[serde(default)]
    pub head_count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            budget: None,
            sink_count: default_sink(),
            heavy_count: default_heavy(),
            head_count: None,
            seed: 0,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn budget_for(&self, pot: &PotConfig) -> usize {
        self.budget.unwrap_or(pot.capacity.saturating_sub(1))
    }

    pub fn validate(&self, pot: &PotConfig) -> Result<()> {
        pot.validate()?;
        if self.kind.is_cyclic() {
            return Ok(());
        }
        let b = self.budget_for(pot);
        if b == 0 || b >= pot.capacity {
            return Err(Error::config(
                "budget",
                format!("{b} must lie in 1..|M| = {} (one slot for the incoming token)", pot.capacity),
            ));
        }
        match self.kind {
            PolicyKind::Streaming if self.sink_count >= b => Err(Error::config(
                "sink_count",
                format!("{} exceeds budget {b}", self.sink_count),
            )),
            PolicyKind::H2o if self.heavy_count > b => Err(Error::config(
                "heavy_count",
                format!("{} exceeds budget {b}", self.heavy_count),
            )),
            PolicyKind::Truncate if self.head_count.is_some_and(|h| h > b) => {
                Err(Error::config("head_count", format!("exceeds budget {b}")))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, pot: &PotConfig) -> Result<Box<dyn KvPolicy>> {
        self.validate(pot)?;
        let b = self.budget_for(pot);
        Ok(match self.kind {
            PolicyKind::Ccd => Box::new(CcdPolicy::from_config(pot)?),
            PolicyKind::Random => Box::new(RandomPolicy::new(self.seed)),
            PolicyKind::Swa => Box::new(EvictingPolicy::new(Rule::Swa, b)),
            PolicyKind::Streaming => Box::new(EvictingPolicy::new(Rule::Streaming(self.sink_count), b)),
            PolicyKind::H2o => Box::new(EvictingPolicy::new(Rule::H2o(self.heavy_count), b)),
            PolicyKind::Tova => Box::new(EvictingPolicy::new(Rule::Tova, b)),
            PolicyKind::Sirllm => Box::new(EvictingPolicy::new(Rule::SirLlm, b)),
            PolicyKind::Truncate => {
                let head = self.head_count.unwrap_or(b.div_ceil(2));
                let mut p = EvictingPolicy::new(Rule::Streaming(head), b);
                p.id = "truncate";
                p.truncate = true;
                Box::new(p)
            }
        })
    }
}

// Admission rules. Each returns the indices to keep, ascending, out of
// `len` current entries; ties go to the lower index.

/// The most recent `budget` entries.
pub fn swa_keep(len: usize, budget: usize) -> Vec<usize> {
    (len.saturating_sub(budget)..len).collect()
}

/// The first `sink` entries plus the most recent `budget - sink`.
pub fn streaming_keep(len: usize, budget: usize, sink: usize) -> Vec<usize> {
    if len <= budget {
        return (0..len).collect();
    }
    let sink = sink.min(budget);
    (0..sink).chain(len - (budget - sink)..len).collect()
}

/// Most recent `budget - heavy` entries plus the `heavy` highest accumulated
/// attention among the others.
pub fn h2o_keep(accumulated: &[f32], budget: usize, heavy: usize) -> Vec<usize> {
    let len = accumulated.len();
    if len <= budget {
        return (0..len).collect();
    }
    let heavy = heavy.min(budget);
    let recent_start = len - (budget - heavy);
    let mut keep = top_k_by(&accumulated[..recent_start], heavy, |a, b| {
        a.partial_cmp(&b).unwrap_or(Ordering::Equal)
    });
    keep.extend(recent_start..len);
    keep.sort_unstable();
    keep
}

/// Entries with the highest score, `budget` of them.
pub fn top_score_keep<T: Copy + PartialOrd>(scores: &[T], budget: usize) -> Vec<usize> {
    let mut keep = top_k_by(scores, budget.min(scores.len()), |a, b| {
        a.partial_cmp(&b).unwrap_or(Ordering::Equal)
    });
    keep.sort_unstable();
    keep
}

/// Head and tail of a stream that an offline `budget`-token truncation keeps.
pub fn truncate_ranges(len: usize, budget: usize, head: usize) -> Vec<Range<usize>> {
    if len <= budget {
        #[allow(clippy::single_range_in_vec_init)]
        return vec![0..len];
    }
    let head = head.min(budget);
    vec![0..head, len - (budget - head)..len]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Swa,
    Streaming(usize),
    H2o(usize),
    Tova,
    SirLlm,
}

/// A per-token baseline.
#[derive(Debug, Clone)]
struct EvictingPolicy {
    id: &'static str,
    rule: Rule,
    budget: usize,
    truncate: bool,
    accumulated: PerHead<Vec<f32>>,
}

impl EvictingPolicy {
    fn new(rule: Rule, budget: usize) -> Self {
        let id = match rule {
            Rule::Swa => "swa",
            Rule::Streaming(_) => "streaming",
            Rule::H2o(_) => "h2o",
            Rule::Tova => "tova",
            Rule::SirLlm => "sirllm",
        };
        Self {
            id,
            rule,
            budget,
            truncate: false,
            accumulated: Vec::new(),
        }
    }

    fn keep_sets(&self, pot: &MemoryPot, out: &ChunkOutput) -> Result<PerHead<Vec<usize>>> {
        let len = pot.occupancy();
        let per_head = |f: &dyn Fn(usize, usize) -> Vec<usize>| -> PerHead<Vec<usize>> {
            (0..pot.n_layers())
                .map(|l| (0..pot.n_heads()).map(|h| f(l, h)).collect())
                .collect()
        };
        Ok(match self.rule {
            Rule::Swa => per_head(&|_, _| swa_keep(len, self.budget)),
            Rule::Streaming(sink) => per_head(&|_, _| streaming_keep(len, self.budget, sink)),
            Rule::H2o(heavy) => per_head(&|l, h| h2o_keep(&self.accumulated[l][h], self.budget, heavy)),
            Rule::SirLlm => per_head(&|l, h| top_score_keep(&pot.head(l, h).nuc, self.budget)),
            Rule::Tova => {
                let rows = out
                    .last_row_attn
                    .as_ref()
                    .ok_or_else(|| Error::State("attention row was not captured".into()))?;
                per_head(&|l, h| top_score_keep(&rows[l][h], self.budget))
            }
        })
    }
}

impl KvPolicy for EvictingPolicy {
    fn id(&self) -> &str {
        self.id
    }

    fn capture(&self) -> Capture {
        match self.rule {
            Rule::H2o(_) => Capture {
                column_mass: true,
                ..Capture::none()
            },
            Rule::Tova => Capture {
                last_row: true,
                ..Capture::none()
            },
            _ => Capture::none(),
        }
    }

    fn intake_room(&self, pot: &MemoryPot) -> usize {
        let occ = pot.occupancy();
        if occ < self.budget {
            self.budget - occ
        } else {
            (self.budget + 1).saturating_sub(occ)
        }
    }

    fn after_intake(&mut self, pot: &mut MemoryPot, out: &ChunkOutput) -> Result<()> {
        if let (Rule::H2o(_), Some(mass)) = (self.rule, &out.column_mass) {
            if self.accumulated.is_empty() {
                self.accumulated = vec![vec![Vec::new(); pot.n_heads()]; pot.n_layers()];
            }
            for (acc_l, mass_l) in self.accumulated.iter_mut().zip(mass) {
                for (acc, m) in acc_l.iter_mut().zip(mass_l) {
                    acc.resize(m.len(), 0.0);
                    for (a, v) in acc.iter_mut().zip(m) {
                        *a += v;
                    }
                }
            }
        }
        if pot.occupancy() <= self.budget {
            return Ok(());
        }
        let keep = self.keep_sets(pot, out)?;
        if !self.accumulated.is_empty() {
            for (acc_l, keep_l) in self.accumulated.iter_mut().zip(&keep) {
                for (acc, k) in acc_l.iter_mut().zip(keep_l) {
                    *acc = k.iter().map(|&j| acc[j]).collect();
                }
            }
        }
        pot.retain(&keep)
    }

    fn plan_context(&mut self, stream_len: usize) -> Option<Vec<Range<usize>>> {
        match (self.truncate, self.rule) {
            (true, Rule::Streaming(head)) => Some(truncate_ranges(stream_len, self.budget, head)),
            _ => None,
        }
    }
}

/// Control policy: on the distillation schedule, keep a uniformly random
/// |C|-subset per head.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl KvPolicy for RandomPolicy {
    fn id(&self) -> &str {
        "random"
    }

    fn intake_room(&self, pot: &MemoryPot) -> usize {
        pot.remaining_intake()
    }

    fn make_room(&mut self, _model: &Model, pot: &mut MemoryPot) -> Result<Option<DistillReport>> {
        let n = pot.occupancy();
        let c = pot.config().compressed_size;
        let retained: PerHead<Vec<usize>> = (0..pot.n_layers())
            .map(|_| {
                (0..pot.n_heads())
                    .map(|_| {
                        let mut s = sample(&mut self.rng, n, c).into_vec();
                        s.sort_unstable();
                        s
                    })
                    .collect()
            })
            .collect();
        let sheet = ScoreSheet {
            cap_scores: Vec::new(),
            nuc_scores: ScoreSheet::nuc_from_pot(pot),
        };
        let report = DistillReport::build(pot, &retained, &sheet);
        pot.compact(&retained, &sheet)?;
        Ok(Some(report))
    }
}
