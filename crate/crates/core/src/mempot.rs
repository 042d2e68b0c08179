//! The memory pot: a fixed-capacity KV store holding, per layer and head,
//! unrotated keys, values and per-entry metadata.
//!
//! Every append goes through [`MemoryPot::push_rows`], which refuses to go
//! beyond capacity and records the peak occupancy, so the bound is both
//! enforced and observable.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::ccd::{CapPreset, ScoreSheet};
use crate::error::{Error, Result};
use crate::minimodel::{ModelConfig, PerHead};

/// Original-position marker for catalyst rows, which are never stream tokens.
pub const CATALYST_POSITION: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotConfig {
    /// |M|: maximum entries per head.
    pub capacity: usize,
    /// |C|: entries per head after a distillation.
    pub compressed_size: usize,
    /// |P|: catalyst prompt length; these slots are reserved.
    pub cap_len: usize,
    /// α: fraction of |C| reserved for novelty picks.
    #[serde(default = "default_nuc_ratio")]
    pub nuc_ratio: f64,
    /// Prefill chunk size; defaults to |M| - |P|.
    #[serde(default)]
    pub chunk_size: Option<usize>,
    #[serde(default)]
    pub cap_preset: CapPreset,
    /// Question for the `Q` preset, prompt text for `Custom`.
    #[serde(default)]
    pub cap_text: Option<String>,
}

fn default_nuc_ratio() -> f64 {
    0.5
}

impl PotConfig {
    pub fn new(capacity: usize, cap_len: usize, compressed_size: usize) -> Self {
        Self {
            capacity,
            compressed_size,
            cap_len,
            nuc_ratio: default_nuc_ratio(),
            chunk_size: None,
            cap_preset: CapPreset::default(),
            cap_text: None,
        }
    }

    /// A pot that never distills: no catalyst reservation, nothing retained.
    pub fn unbounded(capacity: usize) -> Self {
        Self {
            nuc_ratio: 0.0,
            ..Self::new(capacity, 0, 0)
        }
    }

    pub fn with_nuc_ratio(mut self, nuc_ratio: f64) -> Self {
        self.nuc_ratio = nuc_ratio;
        self
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Self {
        self.chunk_size = Some(chunk_size);
        self
    }

    pub fn with_catalyst(mut self, preset: CapPreset, text: Option<String>) -> Self {
        self.cap_preset = preset;
        self.cap_text = text;
        self
    }

    /// T = round(α·|C|).
    pub fn nuc_slots(&self) -> usize {
        ((self.nuc_ratio * self.compressed_size as f64).round() as usize).min(self.compressed_size)
    }

    /// |M| - |P|: occupancy at which a distillation must run.
    pub fn trigger_occupancy(&self) -> usize {
        self.capacity.saturating_sub(self.cap_len)
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size.unwrap_or_else(|| self.trigger_occupancy()).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("capacity", "must be at least 1"));
        }
        if self.cap_len >= self.capacity {
            return Err(Error::config(
                "cap_len",
                format!("{} leaves no room below capacity {}", self.cap_len, self.capacity),
            ));
        }
        if self.compressed_size >= self.capacity - self.cap_len {
            return Err(Error::config(
                "compressed_size",
                format!(
                    "|C| = {} must be below |M| - |P| = {}",
                    self.compressed_size,
                    self.capacity - self.cap_len
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.nuc_ratio) {
            return Err(Error::config(
                "nuc_ratio",
                format!("must lie in [0, 1], got {}", self.nuc_ratio),
            ));
        }
        if self.chunk_size == Some(0) {
            return Err(Error::config("chunk_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Entries of one (layer, head), structure-of-arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadStore {
    d_head: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    pub token_ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub slots: Vec<usize>,
    pub nuc: Vec<f64>,
}

impl HeadStore {
    fn new(d_head: usize) -> Self {
        Self {
            d_head,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Unrotated key of entry `j`.
    pub fn key(&self, j: usize) -> &[f32] {
        &self.keys[j * self.d_head..(j + 1) * self.d_head]
    }

    pub fn value(&self, j: usize) -> &[f32] {
        &self.values[j * self.d_head..(j + 1) * self.d_head]
    }

    fn truncate(&mut self, n: usize) {
        self.keys.truncate(n * self.d_head);
        self.values.truncate(n * self.d_head);
        self.token_ids.truncate(n);
        self.positions.truncate(n);
        self.slots.truncate(n);
        self.nuc.truncate(n);
    }

    /// Keep `indices` (ascending) and renumber slots from zero.
    fn gather(&mut self, indices: &[usize]) {
        let dh = self.d_head;
        let mut keys = Vec::with_capacity(indices.len() * dh);
        let mut values = Vec::with_capacity(indices.len() * dh);
        for &j in indices {
            keys.extend_from_slice(self.key(j));
            values.extend_from_slice(self.value(j));
        }
        self.keys = keys;
        self.values = values;
        self.token_ids = indices.iter().map(|&j| self.token_ids[j]).collect();
        self.positions = indices.iter().map(|&j| self.positions[j]).collect();
        self.nuc = indices.iter().map(|&j| self.nuc[j]).collect();
        self.slots = (0..indices.len()).collect();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryPot {
    config: PotConfig,
    n_layers: usize,
    n_heads: usize,
    d_head: usize,
    heads: Vec<HeadStore>,
    stream_len: usize,
    cycle_counter: usize,
    rope_recompute_counter: usize,
    peak_occupancy: usize,
    max_rope_position: Option<usize>,
}

impl MemoryPot {
    pub fn new(config: PotConfig, model: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, model))
    }

    pub fn unbounded(model: &ModelConfig, capacity: usize) -> Self {
        Self::build(PotConfig::unbounded(capacity.max(1)), model)
    }

    fn build(config: PotConfig, model: &ModelConfig) -> Self {
        Self {
            config,
            n_layers: model.n_layers,
            n_heads: model.n_heads,
            d_head: model.d_head,
            heads: (0..model.n_layers * model.n_heads)
                .map(|_| HeadStore::new(model.d_head))
                .collect(),
            stream_len: 0,
            cycle_counter: 0,
            rope_recompute_counter: 0,
            peak_occupancy: 0,
            max_rope_position: None,
        }
    }

    pub fn config(&self) -> &PotConfig {
        &self.config
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn head(&self, layer: usize, head: usize) -> &HeadStore {
        &self.heads[layer * self.n_heads + head]
    }

    /// Heads in layer-major order.
    pub fn heads(&self) -> impl Iterator<Item = &HeadStore> {
        self.heads.iter()
    }

    /// Entries per head; every head holds the same count.
    pub fn occupancy(&self) -> usize {
        self.heads.iter().map(HeadStore::len).max().unwrap_or(0)
    }

    /// New context tokens acceptable before a distillation must run.
    pub fn remaining_intake(&self) -> usize {
        self.config.trigger_occupancy().saturating_sub(self.occupancy())
    }

    pub fn last_slot(&self) -> Option<usize> {
        self.heads.first().and_then(|h| h.slots.last().copied())
    }

    /// Stream tokens appended so far (catalyst rows excluded).
    pub fn stream_len(&self) -> usize {
        self.stream_len
    }

    pub fn cycle_counter(&self) -> usize {
        self.cycle_counter
    }

    pub fn rope_recompute_counter(&self) -> usize {
        self.rope_recompute_counter
    }

    pub fn peak_occupancy(&self) -> usize {
        self.peak_occupancy
    }

    /// Largest position ever handed to the rotary transform for this pot.
    pub fn max_rope_position(&self) -> Option<usize> {
        self.max_rope_position
    }

    pub(crate) fn note_rope_position(&mut self, position: usize) {
        self.max_rope_position = Some(self.max_rope_position.map_or(position, |p| p.max(position)));
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push_rows(
        &mut self,
        layer: usize,
        head: usize,
        keys: ArrayView2<'_, f32>,
        values: ArrayView2<'_, f32>,
        tokens: &[u32],
        originals: &[usize],
        slots: &[usize],
    ) {
        let capacity = self.config.capacity;
        let store = &mut self.heads[layer * self.n_heads + head];
        assert!(
            store.len() + tokens.len() <= capacity,
            "pot append beyond capacity; forward_chunk must check first"
        );
        store.keys.extend(keys.iter());
        store.values.extend(values.iter());
        store.token_ids.extend_from_slice(tokens);
        store.positions.extend_from_slice(originals);
        store.slots.extend_from_slice(slots);
        store.nuc.extend(std::iter::repeat_n(0.0, tokens.len()));
        self.peak_occupancy = self.peak_occupancy.max(store.len());
    }

    pub(crate) fn advance_stream(&mut self, rows: usize) {
        self.stream_len += rows;
    }

    /// Drop the last `count` entries of every head.
    pub fn discard_tail(&mut self, count: usize) {
        let keep = self.occupancy().saturating_sub(count);
        for h in &mut self.heads {
            h.truncate(keep);
        }
    }

    /// Set novelty scores of the most recent `scores.len()` entries of every head.
    pub fn set_tail_nuc(&mut self, scores: &[f64]) -> Result<()> {
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Contract(format!("novelty score {bad} is not finite and >= 0")));
        }
        for h in &mut self.heads {
            if scores.len() > h.len() {
                return Err(Error::Contract("more scores than pot entries".into()));
            }
            let start = h.len() - scores.len();
            h.nuc[start..].copy_from_slice(scores);
        }
        Ok(())
    }

    /// Keep the given entries of every head, renumbering slots from zero.
    ///
    /// Each set may be in any order but must be duplicate-free, reference
    /// stream entries only and have the same size in every head. Counts as
    /// one eviction cycle and one rotary re-layout.
    pub fn retain(&mut self, retained: &PerHead<Vec<usize>>) -> Result<()> {
        let sets = self.normalise(retained)?;
        if let Some(first) = sets.first() {
            if sets.iter().any(|s| s.len() != first.len()) {
                return Err(Error::Selection("retained sets differ in size across heads".into()));
            }
        }
        for (h, set) in self.heads.iter_mut().zip(&sets) {
            h.gather(set);
        }
        self.cycle_counter += 1;
        self.rope_recompute_counter += 1;
        Ok(())
    }

    /// Distillation compaction: every head keeps exactly |C| entries and
    /// survivors carry the novelty scores recorded in `scores`.
    pub fn compact(&mut self, retained: &PerHead<Vec<usize>>, scores: &ScoreSheet) -> Result<()> {
        let c = self.config.compressed_size;
        let sets = self.normalise(retained)?;
        if let Some(bad) = sets.iter().find(|s| s.len() != c) {
            return Err(Error::Selection(format!(
                "retained set has {} entries, expected |C| = {}",
                bad.len(),
                c
            )));
        }
        for (i, h) in self.heads.iter_mut().enumerate() {
            let (layer, head) = (i / self.n_heads, i % self.n_heads);
            if let Some(nuc) = scores.nuc_scores.get(layer).and_then(|l| l.get(head)) {
                if nuc.len() == h.len() {
                    h.nuc.copy_from_slice(nuc);
                }
            }
        }
        self.retain(retained)
    }

    fn normalise(&self, retained: &PerHead<Vec<usize>>) -> Result<Vec<Vec<usize>>> {
        if retained.len() != self.n_layers || retained.iter().any(|l| l.len() != self.n_heads) {
            return Err(Error::Selection(format!(
                "expected {} x {} retained sets",
                self.n_layers, self.n_heads
            )));
        }
        let mut out = Vec::with_capacity(self.heads.len());
        for (store, set) in self.heads.iter().zip(retained.iter().flatten()) {
            let mut set = set.clone();
            set.sort_unstable();
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Selection("duplicate index in retained set".into()));
            }
            if let Some(&bad) = set.iter().find(|&&j| j >= store.len()) {
                return Err(Error::Selection(format!(
                    "index {bad} beyond occupancy {}",
                    store.len()
                )));
            }
            if set.iter().any(|&j| store.positions[j] == CATALYST_POSITION) {
                return Err(Error::Selection("catalyst rows cannot be retained".into()));
            }
            out.push(set);
        }
        Ok(out)
    }

    /// Original stream positions held by each head, `[layer][head]`.
    pub fn retained_positions(&self) -> PerHead<Vec<usize>> {
        (0..self.n_layers)
            .map(|l| (0..self.n_heads).map(|h| self.head(l, h).positions.clone()).collect())
            .collect()
    }

    pub fn snapshot(&self) -> PotSnapshot {
        PotSnapshot {
            capacity: self.config.capacity,
            occupancy: self.occupancy(),
            stream_len: self.stream_len,
            cycle_counter: self.cycle_counter,
            rope_recompute_counter: self.rope_recompute_counter,
            peak_occupancy: self.peak_occupancy,
            layers: (0..self.n_layers)
                .map(|l| {
                    (0..self.n_heads)
                        .map(|h| {
                            let s = self.head(l, h);
                            (0..s.len())
                                .map(|j| SnapshotEntry {
                                    token_id: s.token_ids[j],
                                    original_position: s.positions[j],
                                    slot: s.slots[j],
                                    nuc_score: s.nuc[j],
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Free-function form of [`MemoryPot::new`].
pub fn pot_new(config: PotConfig, model_config: &ModelConfig) -> Result<MemoryPot> {
    MemoryPot::new(config, model_config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub token_id: u32,
    pub original_position: usize,
    pub slot: usize,
    pub nuc_score: f64,
}

/// Debug dump of a pot; `layers[layer][head]` lists entries in slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotSnapshot {
    pub capacity: usize,
    pub occupancy: usize,
    pub stream_len: usize,
    pub cycle_counter: usize,
    pub rope_recompute_counter: usize,
    pub peak_occupancy: usize,
    pub layers: Vec<Vec<Vec<SnapshotEntry>>>,
}
