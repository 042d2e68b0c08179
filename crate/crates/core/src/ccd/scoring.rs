use ndarray::ArrayView2;

use super::cap::CatalystPrompt;
use crate::error::{Error, Result};
use crate::mempot::MemoryPot;
use crate::minimodel::{Capture, Model, PerHead};

/// Negative log-probability of `target` under softmax(`logits`), in f64.
pub fn cross_entropy(logits: &[f32], target: u32) -> f64 {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = max + logits.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
    (lse - logits[target as usize] as f64).max(0.0)
}

/// Novelty scores: row `t` of `logits` predicts `target_ids[t]`.
pub fn score_nuc(logits: ArrayView2<'_, f32>, target_ids: &[u32]) -> Result<Vec<f64>> {
    let (rows, vocab) = logits.dim();
    if rows != target_ids.len() {
        return Err(Error::Contract(format!(
            "{rows} logit rows for {} targets",
            target_ids.len()
        )));
    }
    if let Some(&bad) = target_ids.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::Contract(format!("target {bad} outside vocab of {vocab}")));
    }
    Ok(logits
        .rows()
        .into_iter()
        .zip(target_ids)
        .map(|(row, &t)| match row.as_slice() {
            Some(s) => cross_entropy(s, t),
            None => cross_entropy(&row.to_vec(), t),
        })
        .collect())
}

/// Future-importance scores from catalyst attention.
///
/// The prompt occupies positions `|M|-|P| .. |M|-1`; its rows' attention onto
/// every pot column is summed per layer and head. The catalyst entries are
/// removed again before returning.
pub fn score_cap(model: &Model, pot: &mut MemoryPot, cap: &CatalystPrompt) -> Result<PerHead<Vec<f32>>> {
    let cfg = pot.config();
    if cap.len() != cfg.cap_len {
        return Err(Error::Contract(format!(
            "catalyst has {} tokens but the pot reserves {}",
            cap.len(),
            cfg.cap_len
        )));
    }
    if pot.remaining_intake() != 0 || pot.occupancy() != cfg.trigger_occupancy() {
        return Err(Error::State(format!(
            "catalyst scoring needs occupancy {} but the pot holds {}",
            cfg.trigger_occupancy(),
            pot.occupancy()
        )));
    }
    let start = cfg.trigger_occupancy();
    let positions: Vec<usize> = (start..cfg.capacity).collect();
    let out = model.forward_chunk(pot, &cap.token_ids, &positions, &Capture::catalyst(cap.len()))?;
    pot.discard_tail(cap.len());
    Ok(out.cap_attn_sums.expect("catalyst capture requested"))
}
