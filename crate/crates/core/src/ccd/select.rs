//! Two-step survivor selection: novelty picks first, then catalyst scores.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Indices of the `k` largest scores, ties to the lower index, in rank order.
pub fn top_k_by<T: Copy>(scores: &[T], k: usize, cmp: impl Fn(T, T) -> Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let order = |&a: &usize, &b: &usize| cmp(scores[b], scores[a]).then(a.cmp(&b));
    let k = k.min(idx.len());
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    } else if k == 0 {
        idx.clear();
    }
    idx.sort_unstable_by(order);
    idx
}

/// Survivors of one head, ascending.
///
/// The `nuc_slots` highest-novelty candidates are always kept; the rest of
/// the `compressed` slots go to the highest catalyst scores among the others.
/// This is the same as lifting the novelty picks to the head maximum and
/// taking the top `compressed`, with the picks winning any tie at the top.
/// Returns `None` when there is nothing to evict.
pub fn select_head(
    cap_scores: &[f32],
    nuc_scores: &[f64],
    compressed: usize,
    nuc_slots: usize,
) -> Result<Option<Vec<usize>>> {
    let n = cap_scores.len();
    if nuc_scores.len() != n {
        return Err(Error::Contract(format!(
            "{} catalyst scores but {} novelty scores",
            n,
            nuc_scores.len()
        )));
    }
    if nuc_slots > compressed {
        return Err(Error::Contract(format!(
            "nuc slots {nuc_slots} exceed compressed size {compressed}"
        )));
    }
    if n <= compressed {
        return Ok(None);
    }
    let picks = top_k_by(nuc_scores, nuc_slots, |a: f64, b: f64| a.total_cmp(&b));
    let mut taken = vec![false; n];
    picks.iter().for_each(|&i| taken[i] = true);
    let rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    let rest_scores: Vec<f32> = rest.iter().map(|&i| cap_scores[i]).collect();
    let mut keep: Vec<usize> = top_k_by(&rest_scores, compressed - nuc_slots, |a: f32, b: f32| a.total_cmp(&b))
        .into_iter()
        .map(|j| rest[j])
        .chain(picks)
        .collect();
    keep.sort_unstable();
    Ok(Some(keep))
}

/// Per-head selection with a novelty vector shared by all heads.
pub fn select_tokens(
    cap_scores: &[Vec<f32>],
    nuc_scores: &[f64],
    compressed: usize,
    nuc_slots: usize,
) -> Result<Option<Vec<Vec<usize>>>> {
    let mut out = Vec::with_capacity(cap_scores.len());
    for head in cap_scores {
        match select_head(head, nuc_scores, compressed, nuc_slots)? {
            Some(keep) => out.push(keep),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}
