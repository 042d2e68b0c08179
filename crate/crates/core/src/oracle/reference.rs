//! Slow, independent reference computations in f64.
//!
//! Nothing here shares code with the engine's forward pass: rotary angles,
//! normalisation, attention and the feed-forward are all re-derived with
//! plain loops, and full attention matrices are materialised.

use crate::mempot::MemoryPot;
use crate::minimodel::Model;

/// Cached keys (unrotated), values and rotary slots of one head.
#[derive(Debug, Clone, Default)]
pub struct PrefixHead {
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub slots: Vec<usize>,
}

/// `[layer][head]` prefix state, as held by a pot.
pub type Prefix = Vec<Vec<PrefixHead>>;

pub fn prefix_from_pot(pot: &MemoryPot) -> Prefix {
    (0..pot.n_layers())
        .map(|l| {
            (0..pot.n_heads())
                .map(|h| {
                    let s = pot.head(l, h);
                    PrefixHead {
                        keys: (0..s.len()).map(|j| s.key(j).iter().map(|&v| v as f64).collect()).collect(),
                        values: (0..s.len()).map(|j| s.value(j).iter().map(|&v| v as f64).collect()).collect(),
                        slots: s.slots.clone(),
                    }
                })
                .collect()
        })
        .collect()
}

pub struct NaiveOutput {
    /// One row per input token.
    pub logits: Vec<Vec<f64>>,
    /// `[layer][head]` attention matrix, `n` rows by `prefix + n` columns.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
}

fn matvec(x: &[f64], w: &ndarray::Array2<f32>) -> Vec<f64> {
    let (rows, cols) = w.dim();
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let xr = x[r];
        for c in 0..cols {
            out[c] += xr * w[[r, c]] as f64;
        }
    }
    out
}

fn rmsnorm(x: &[f64], gain: &ndarray::Array1<f32>) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = 1.0 / (ms + 1e-5).sqrt();
    x.iter().zip(gain.iter()).map(|(v, &g)| v * r * g as f64).collect()
}

fn gelu_tanh(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn rotate(v: &[f64], pos: usize, base: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for i in 0..d / 2 {
        let theta = pos as f64 / base.powf(2.0 * i as f64 / d as f64);
        let (s, c) = theta.sin_cos();
        out[2 * i] = v[2 * i] * c - v[2 * i + 1] * s;
        out[2 * i + 1] = v[2 * i] * s + v[2 * i + 1] * c;
    }
    out
}

/// Causal forward of `tokens` at `positions` on top of `prefix`.
pub fn naive_forward(model: &Model, prefix: &Prefix, tokens: &[u32], positions: &[usize]) -> NaiveOutput {
    let cfg = &model.config;
    let (d, dh, nh) = (cfg.d_model, cfg.d_head, cfg.n_heads);
    let n = tokens.len();
    let base = cfg.rope_base as f64;
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| model.tok_emb.row(t as usize).iter().map(|&v| v as f64).collect())
        .collect();
    let mut attention = Vec::new();
    for (l, lw) in model.layers.iter().enumerate() {
        let normed: Vec<Vec<f64>> = x.iter().map(|r| rmsnorm(r, &lw.attn_norm)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|r| matvec(r, &lw.wq)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|r| matvec(r, &lw.wk)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| matvec(r, &lw.wv)).collect();
        let mut mixed = vec![vec![0.0; d]; n];
        let mut layer_attn = Vec::new();
        for h in 0..nh {
            let pre = prefix.get(l).and_then(|p| p.get(h)).cloned().unwrap_or_default();
            let m = pre.keys.len();
            let mut keys: Vec<Vec<f64>> = (0..m).map(|j| rotate(&pre.keys[j], pre.slots[j], base)).collect();
            let mut vals = pre.values.clone();
            for i in 0..n {
                keys.push(rotate(&k[i][h * dh..(h + 1) * dh], positions[i], base));
                vals.push(v[i][h * dh..(h + 1) * dh].to_vec());
            }
            let mut matrix = vec![vec![0.0; m + n]; n];
            for i in 0..n {
                let qi = rotate(&q[i][h * dh..(h + 1) * dh], positions[i], base);
                let visible = m + i + 1;
                let logits: Vec<f64> = (0..visible)
                    .map(|j| qi.iter().zip(&keys[j]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|s| (s - mx).exp()).sum();
                for j in 0..visible {
                    matrix[i][j] = (logits[j] - mx).exp() / z;
                }
                for j in 0..visible {
                    for c in 0..dh {
                        mixed[i][h * dh + c] += matrix[i][j] * vals[j][c];
                    }
                }
            }
            layer_attn.push(matrix);
        }
        attention.push(layer_attn);
        for i in 0..n {
            let o = matvec(&mixed[i], &lw.wo);
            for c in 0..d {
                x[i][c] += o[c];
            }
            let h2 = rmsnorm(&x[i], &lw.ffn_norm);
            let up: Vec<f64> = matvec(&h2, &lw.w_up).into_iter().map(gelu_tanh).collect();
            let down = matvec(&up, &lw.w_down);
            for c in 0..d {
                x[i][c] += down[c];
            }
        }
    }
    let logits = x
        .iter()
        .map(|r| matvec(&rmsnorm(r, &model.final_norm), &model.lm_head))
        .collect();
    NaiveOutput { logits, attention }
}

/// −log softmax(logits)[target], via explicit exponentials.
pub fn naive_cross_entropy(logits: &[f64], target: u32) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = probs.iter().sum();
    -(probs[target as usize] / z).ln()
}

/// Catalyst column sums for a pot in trigger state: the last `cap.len()`
/// rows of each head's attention, summed over the pot's columns.
pub fn naive_cap_scores(model: &Model, pot: &MemoryPot, cap: &[u32]) -> Vec<Vec<Vec<f64>>> {
    let prefix = prefix_from_pot(pot);
    let m = pot.occupancy();
    let positions: Vec<usize> = (m..m + cap.len()).collect();
    let out = naive_forward(model, &prefix, cap, &positions);
    out.attention
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|mat| (0..m).map(|j| mat.iter().map(|row| row[j]).sum()).collect())
                .collect()
        })
        .collect()
}
