use std::ops::Range;

use ndarray::{s, Array2, ArrayView1};

use super::{build_cap, cross_entropy, distill, CatalystPrompt, DistillReport};
use crate::error::{Error, Result};
use crate::mempot::{MemoryPot, PotConfig};
use crate::minimodel::{ChunkOutput, Model};
use crate::policies::KvPolicy;
use crate::tokenizer::{ByteTokenizer, BOS_ID};

/// The distillation policy: lazy trigger at |M| - |P|, catalyst + novelty
/// selection down to |C|.
#[derive(Debug, Clone)]
pub struct CcdPolicy {
    cap: CatalystPrompt,
}

impl CcdPolicy {
    pub fn new(cap: CatalystPrompt) -> Self {
        Self { cap }
    }

    /// Catalyst built from the pot config's preset and text.
    pub fn from_config(config: &PotConfig) -> Result<Self> {
        let cap = build_cap(
            config.cap_preset,
            &ByteTokenizer,
            config.cap_text.as_deref(),
            config.cap_len,
        )?;
        Ok(Self::new(cap))
    }

    pub fn catalyst(&self) -> &CatalystPrompt {
        &self.cap
    }
}

impl KvPolicy for CcdPolicy {
    fn id(&self) -> &str {
        "ccd"
    }

    fn intake_room(&self, pot: &MemoryPot) -> usize {
        pot.remaining_intake()
    }

    fn make_room(&mut self, model: &Model, pot: &mut MemoryPot) -> Result<Option<DistillReport>> {
        distill(model, pot, &self.cap).map(Some)
    }
}

/// One logical stream through a pot under some policy.
///
/// Tokens are fed in chunks of at most `chunk_size`, each one positioned
/// directly after the pot's current slots. Every stream token gets its
/// novelty recorded from the preceding prediction; the first token of the
/// stream is predicted from a lone BOS.
pub struct Session<'m> {
    model: &'m Model,
    pot: MemoryPot,
    policy: Box<dyn KvPolicy + 'm>,
    next_logits: Option<Vec<f32>>,
    reports: Vec<DistillReport>,
    planned: bool,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, pot_config: PotConfig, policy: Box<dyn KvPolicy + 'm>) -> Result<Self> {
        let pot = MemoryPot::new(pot_config, &model.config)?;
        Ok(Self {
            model,
            pot,
            policy,
            next_logits: None,
            reports: Vec::new(),
            planned: false,
        })
    }

    pub fn ccd(model: &'m Model, pot_config: PotConfig) -> Result<Self> {
        let policy = CcdPolicy::from_config(&pot_config)?;
        Self::new(model, pot_config, Box::new(policy))
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn pot(&self) -> &MemoryPot {
        &self.pot
    }

    pub fn policy_id(&self) -> &str {
        self.policy.id()
    }

    pub fn reports(&self) -> &[DistillReport] {
        &self.reports
    }

    /// Prediction for the next stream token, if any token was consumed.
    pub fn next_logits(&self) -> Option<&[f32]> {
        self.next_logits.as_deref()
    }

    /// Consume `stream`, returning one logit row per token taken into the pot.
    pub fn consume(&mut self, stream: &[u32]) -> Result<Array2<f32>> {
        let vocab = self.model.config.vocab_size;
        let mut rows: Vec<f32> = Vec::new();
        self.consume_with(stream, |_, row| rows.extend(row.iter()))?;
        let n = rows.len() / vocab;
        Ok(Array2::from_shape_vec((n, vocab), rows).expect("whole rows"))
    }

    /// Consume `stream`, handing each token's logit row to `sink` together with
    /// its stream offset.
    pub fn consume_with<F>(&mut self, stream: &[u32], mut sink: F) -> Result<()>
    where
        F: FnMut(usize, ArrayView1<'_, f32>),
    {
        let plan = if self.planned {
            None
        } else {
            self.planned = true;
            self.policy.plan_context(stream.len())
        };
        #[allow(clippy::single_range_in_vec_init)]
        let ranges: Vec<Range<usize>> = plan.unwrap_or_else(|| vec![0..stream.len()]);
        let mut cursor = 0;
        for r in ranges {
            if r.start < cursor || r.end > stream.len() {
                return Err(Error::Contract("context plan ranges out of order".into()));
            }
            self.pot.advance_stream(r.start - cursor);
            self.intake(&stream[r.clone()], &mut sink)?;
            cursor = r.end;
        }
        self.pot.advance_stream(stream.len() - cursor);
        Ok(())
    }

    /// Greedy decoding; each generated token is fed back through the pot.
    pub fn generate(&mut self, max_new: usize) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(max_new);
        for _ in 0..max_new {
            let logits = match &self.next_logits {
                Some(l) => l.clone(),
                None => self.bos_logits()?,
            };
            let tok = argmax(&logits);
            out.push(tok);
            self.intake(&[tok], &mut |_, _| {})?;
        }
        Ok(out)
    }

    fn bos_logits(&self) -> Result<Vec<f32>> {
        let mut scratch = MemoryPot::unbounded(&self.model.config, 1);
        let out = self
            .model
            .forward_chunk(&mut scratch, &[BOS_ID], &[0], &Default::default())?;
        Ok(out.logits.row(0).to_vec())
    }

    fn intake(&mut self, tokens: &[u32], sink: &mut dyn FnMut(usize, ArrayView1<'_, f32>)) -> Result<()> {
        let chunk_size = self.pot.config().chunk_size();
        let capture = self.policy.capture();
        let mut idx = 0;
        while idx < tokens.len() {
            let mut room = self.policy.intake_room(&self.pot);
            if room == 0 {
                if let Some(report) = self.policy.make_room(self.model, &mut self.pot)? {
                    self.reports.push(report);
                }
                room = self.policy.intake_room(&self.pot);
                if room == 0 {
                    return Err(Error::State(format!(
                        "policy '{}' left no room in the pot",
                        self.policy.id()
                    )));
                }
            }
            let n = room.min(chunk_size).min(tokens.len() - idx);
            let chunk = &tokens[idx..idx + n];
            let start = self.pot.occupancy();
            let positions: Vec<usize> = (start..start + n).collect();
            let offset = self.pot.stream_len();
            let prev = match self.next_logits.take() {
                Some(l) => l,
                None => self.bos_logits()?,
            };
            let out: ChunkOutput = self.model.forward_chunk(&mut self.pot, chunk, &positions, &capture)?;
            let mut nuc = Vec::with_capacity(n);
            nuc.push(cross_entropy(&prev, chunk[0]));
            for (i, &tok) in chunk.iter().enumerate().skip(1) {
                let row = out.logits.slice(s![i - 1, ..]);
                nuc.push(cross_entropy(row.as_slice().expect("contiguous row"), tok));
            }
            self.pot.set_tail_nuc(&nuc)?;
            for i in 0..n {
                sink(offset + i, out.logits.row(i));
            }
            self.next_logits = Some(out.logits.row(n - 1).to_vec());
            self.policy.after_intake(&mut self.pot, &out)?;
            idx += n;
        }
        Ok(())
    }
}

/// Index of the largest logit, lowest id on ties.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}
