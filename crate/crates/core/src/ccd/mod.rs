//! Continual context distillation: fill the pot, score it with a catalyst
//! prompt and per-token novelty, keep |C| entries per head, repeat.

mod cap;
mod scoring;
mod select;
mod session;

use serde::{Deserialize, Serialize};

pub use cap::{build_cap, CapPreset, CatalystPrompt};
pub use scoring::{cross_entropy, score_cap, score_nuc};
pub use select::{select_head, select_tokens, top_k_by};
pub use session::{argmax, CcdPolicy, Session};

use crate::error::{Error, Result};
use crate::mempot::MemoryPot;
use crate::minimodel::{Model, PerHead};

/// Scores for one distillation cycle, column-aligned with each head's entries.
///
/// Novelty is a per-token quantity: wherever two heads hold the same token
/// they carry the same value. Heads only hold different tokens once earlier
/// cycles have diverged, so the vectors are kept per head.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSheet {
    pub cap_scores: PerHead<Vec<f32>>,
    pub nuc_scores: PerHead<Vec<f64>>,
}

impl ScoreSheet {
    /// Novelty scores as currently stored in the pot.
    pub fn nuc_from_pot(pot: &MemoryPot) -> PerHead<Vec<f64>> {
        (0..pot.n_layers())
            .map(|l| (0..pot.n_heads()).map(|h| pot.head(l, h).nuc.clone()).collect())
            .collect()
    }
}

/// One line of the distillation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub cycle: usize,
    pub consumed_through: usize,
    /// Original stream positions kept by each head, layer-major.
    pub retained: Vec<Vec<usize>>,
    /// Mean catalyst score over all survivors.
    pub mean_cap: f64,
    /// Per-head novelty sum of survivors, averaged over heads.
    pub sum_nuc: f64,
}

impl DistillReport {
    pub(crate) fn build(
        pot: &MemoryPot,
        retained: &PerHead<Vec<usize>>,
        sheet: &ScoreSheet,
    ) -> Self {
        let mut cap_total = 0f64;
        let mut cap_count = 0usize;
        let mut nuc_total = 0f64;
        let mut kept = Vec::new();
        for (l, layer) in retained.iter().enumerate() {
            for (h, set) in layer.iter().enumerate() {
                let store = pot.head(l, h);
                kept.push(set.iter().map(|&j| store.positions[j]).collect());
                if let Some(cap) = sheet.cap_scores.get(l).and_then(|x| x.get(h)) {
                    cap_total += set.iter().map(|&j| cap[j] as f64).sum::<f64>();
                    cap_count += set.len();
                }
                nuc_total += set.iter().map(|&j| sheet.nuc_scores[l][h][j]).sum::<f64>();
            }
        }
        let heads = kept.len().max(1);
        Self {
            cycle: pot.cycle_counter(),
            consumed_through: pot.stream_len(),
            retained: kept,
            mean_cap: if cap_count == 0 { 0.0 } else { cap_total / cap_count as f64 },
            sum_nuc: nuc_total / heads as f64,
        }
    }

    pub fn to_jsonl(reports: &[DistillReport]) -> Result<String> {
        let mut out = String::new();
        for r in reports {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// One distillation cycle on a pot in trigger state.
pub fn distill(model: &Model, pot: &mut MemoryPot, cap: &CatalystPrompt) -> Result<DistillReport> {
    let compressed = pot.config().compressed_size;
    let nuc_slots = pot.config().nuc_slots();
    let cap_scores = score_cap(model, pot, cap)?;
    let sheet = ScoreSheet {
        cap_scores,
        nuc_scores: ScoreSheet::nuc_from_pot(pot),
    };
    let mut retained = Vec::with_capacity(pot.n_layers());
    for (caps, nucs) in sheet.cap_scores.iter().zip(&sheet.nuc_scores) {
        let mut layer = Vec::with_capacity(caps.len());
        for (cap_h, nuc_h) in caps.iter().zip(nucs) {
            let keep = select_head(cap_h, nuc_h, compressed, nuc_slots)?
                .ok_or_else(|| Error::State("distill called with nothing to evict".into()))?;
            layer.push(keep);
        }
        retained.push(layer);
    }
    let report = DistillReport::build(pot, &retained, &sheet);
    pot.compact(&retained, &sheet)?;
    Ok(report)
}
