//! Memory-unconstrained references: global attention scoring over the full
//! context, exact per-token novelty, and the comparisons built on them.

pub mod reference;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::ccd::{argmax, cross_entropy, top_k_by, DistillReport};
use crate::error::{Error, Result};
use crate::mempot::MemoryPot;
use crate::minimodel::{Capture, Model, PerHead};
use crate::tokenizer::BOS_ID;

/// Which layer's attention the comparison uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerChoice {
    #[default]
    Last,
    Index(usize),
    /// Average the per-head result over every layer.
    Mean,
}

impl LayerChoice {
    fn layers(self, n_layers: usize) -> Result<Vec<usize>> {
        match self {
            LayerChoice::Last => Ok(vec![n_layers - 1]),
            LayerChoice::Index(i) if i < n_layers => Ok(vec![i]),
            LayerChoice::Index(i) => Err(Error::config("layer", format!("{i} >= n_layers {n_layers}"))),
            LayerChoice::Mean => Ok((0..n_layers).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalScore {
    /// `[layer][head]` attention of the first generated token over the context.
    pub attention: PerHead<Vec<f32>>,
    /// Exact −log p(x_t | x_<t) for every context token, x_0 conditioned on BOS.
    pub nuc: Vec<f64>,
    pub first_token: u32,
}

impl GlobalScore {
    /// Top-`k` context positions per head of one layer, ascending.
    pub fn top_k(&self, layer: usize, k: usize) -> Vec<Vec<usize>> {
        self.attention[layer]
            .iter()
            .map(|a| {
                let mut s = top_k_by(a, k.min(a.len()), |x: f32, y: f32| x.total_cmp(&y));
                s.sort_unstable();
                s
            })
            .collect()
    }
}

/// Prefill `context ++ query` into an unbounded cache, pick the first token
/// greedily, feed it, and take its attention over the context columns.
pub fn global_scoring(model: &Model, context: &[u32], query: &[u32]) -> Result<GlobalScore> {
    if context.is_empty() {
        return Err(Error::Contract("global scoring needs a non-empty context".into()));
    }
    let n = context.len() + query.len();
    let mut pot = MemoryPot::unbounded(&model.config, n + 1);
    let tokens: Vec<u32> = context.iter().chain(query).copied().collect();
    let positions: Vec<usize> = (0..n).collect();
    let out = model.forward_chunk(&mut pot, &tokens, &positions, &Capture::none())?;
    let first_token = argmax(out.logits.row(n - 1).as_slice().expect("contiguous row"));
    let next = model.forward_chunk(
        &mut pot,
        &[first_token],
        &[n],
        &Capture {
            last_row: true,
            ..Capture::none()
        },
    )?;
    let attention = next
        .last_row_attn
        .expect("requested")
        .into_iter()
        .map(|l| l.into_iter().map(|mut row| {
            row.truncate(context.len());
            row
        }).collect())
        .collect();

    let mut bos_pot = MemoryPot::unbounded(&model.config, 1);
    let bos = model.forward_chunk(&mut bos_pot, &[BOS_ID], &[0], &Capture::none())?;
    let mut nuc = Vec::with_capacity(context.len());
    nuc.push(cross_entropy(bos.logits.row(0).as_slice().expect("contiguous row"), context[0]));
    for (t, &tok) in context.iter().enumerate().skip(1) {
        nuc.push(cross_entropy(out.logits.row(t - 1).as_slice().expect("contiguous row"), tok));
    }
    Ok(GlobalScore {
        attention,
        nuc,
        first_token,
    })
}

fn overlap(retained: &[usize], target: &[usize]) -> f64 {
    if target.is_empty() {
        return 1.0;
    }
    let hits = target.iter().filter(|t| retained.contains(t)).count();
    hits as f64 / target.len() as f64
}

/// Mean over heads of |retained ∩ target| / |target|.
pub fn hit_rate(retained: &[Vec<usize>], oracle_topk: &[Vec<usize>]) -> Result<f64> {
    Ok(per_head_hit(retained, oracle_topk)?.iter().sum::<f64>() / retained.len().max(1) as f64)
}

pub fn per_head_hit(retained: &[Vec<usize>], oracle_topk: &[Vec<usize>]) -> Result<Vec<f64>> {
    if retained.len() != oracle_topk.len() {
        return Err(Error::Contract(format!(
            "{} retained sets vs {} oracle sets",
            retained.len(),
            oracle_topk.len()
        )));
    }
    Ok(retained.iter().zip(oracle_topk).map(|(r, t)| overlap(r, t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropySum {
    pub selected: f64,
    /// Sum of the largest |retained| exact novelty values over the context.
    pub ceiling: f64,
}

impl EntropySum {
    pub fn ratio(&self) -> f64 {
        if self.ceiling <= 0.0 {
            1.0
        } else {
            self.selected / self.ceiling
        }
    }
}

pub fn entropy_sum(retained: &[usize], nuc: &[f64]) -> Result<EntropySum> {
    if let Some(&bad) = retained.iter().find(|&&p| p >= nuc.len()) {
        return Err(Error::Contract(format!("position {bad} beyond context of {}", nuc.len())));
    }
    let selected = retained.iter().map(|&p| nuc[p]).sum();
    let top = top_k_by(nuc, retained.len(), |a: f64, b: f64| a.partial_cmp(&b).unwrap_or(Ordering::Equal));
    let ceiling = top.iter().map(|&p| nuc[p]).sum();
    Ok(EntropySum { selected, ceiling })
}

/// One-sided sign test that `a` tends to exceed `b`; ties are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub p_value: f64,
    pub mean_diff: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Contract("sign test needs paired samples".into()));
    }
    let (mut wins, mut losses) = (0u64, 0u64);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Greater) => wins += 1,
            Some(Ordering::Less) => losses += 1,
            _ => {}
        }
    }
    let n = wins + losses;
    let p_value = if n == 0 {
        1.0
    } else {
        let binom = Binomial::new(0.5, n).expect("valid binomial");
        if wins == 0 { 1.0 } else { binom.sf(wins - 1) }
    };
    let mean_diff = if a.is_empty() {
        0.0
    } else {
        a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64
    };
    Ok(SignTest {
        wins,
        losses,
        ties: a.len() as u64 - n,
        p_value,
        mean_diff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclePoint {
    pub cycle: usize,
    pub consumed_through: usize,
    pub hit_rate: f64,
}

/// Result of comparing one constrained run with the global oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub hit_rate: f64,
    pub per_head_hit: Vec<f64>,
    pub entropy_ratio: f64,
    /// One point per distillation plus a final point for the end state.
    pub cycle_series: Vec<CyclePoint>,
}

/// Compare a final pot and its distillation log with the oracle.
///
/// Hit rates use the oracle's top-`k` per head; `per_head_hit` lists the
/// selected layers' heads in layer-major order.
pub fn analyse(
    oracle: &GlobalScore,
    pot: &MemoryPot,
    reports: &[DistillReport],
    k: usize,
    layer: LayerChoice,
) -> Result<Analysis> {
    let layers = layer.layers(pot.n_layers())?;
    let nh = pot.n_heads();
    let topk: Vec<Vec<Vec<usize>>> = layers.iter().map(|&l| oracle.top_k(l, k)).collect();
    let flat_topk: Vec<Vec<usize>> = topk.iter().flatten().cloned().collect();
    let select = |all: &[Vec<usize>]| -> Vec<Vec<usize>> {
        layers.iter().flat_map(|&l| all[l * nh..(l + 1) * nh].iter().cloned()).collect()
    };
    let mut cycle_series = Vec::with_capacity(reports.len() + 1);
    for r in reports {
        cycle_series.push(CyclePoint {
            cycle: r.cycle,
            consumed_through: r.consumed_through,
            hit_rate: hit_rate(&select(&r.retained), &flat_topk)?,
        });
    }
    let final_sets: Vec<Vec<usize>> = pot.retained_positions().into_iter().flatten().collect();
    let chosen = select(&final_sets);
    let per_head = per_head_hit(&chosen, &flat_topk)?;
    let hit = per_head.iter().sum::<f64>() / per_head.len().max(1) as f64;
    cycle_series.push(CyclePoint {
        cycle: pot.cycle_counter(),
        consumed_through: pot.stream_len(),
        hit_rate: hit,
    });
    let mut ratio = 0.0;
    for set in &chosen {
        let in_context: Vec<usize> = set.iter().copied().filter(|&p| p < oracle.nuc.len()).collect();
        ratio += entropy_sum(&in_context, &oracle.nuc)?.ratio();
    }
    Ok(Analysis {
        hit_rate: hit,
        per_head_hit: per_head,
        entropy_ratio: ratio / chosen.len().max(1) as f64,
        cycle_series,
    })
}

/// How often each context position appears in a head's retained sets
/// across a distillation log, `[head][position]` in layer-major head order.
pub fn retention_histogram(reports: &[DistillReport], context_len: usize) -> Vec<Vec<u32>> {
    let heads = reports.first().map_or(0, |r| r.retained.len());
    let mut hist = vec![vec![0u32; context_len]; heads];
    for r in reports {
        for (h, set) in r.retained.iter().enumerate() {
            for &p in set {
                if p < context_len {
                    hist[h][p] += 1;
                }
            }
        }
    }
    hist
}
