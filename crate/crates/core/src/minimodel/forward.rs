use ndarray::{s, Array1, Array2};

use super::rope::rotate_in_place;
use super::{Model, RMS_EPS};
use crate::error::{Error, Result};
use crate::mempot::MemoryPot;

/// Values indexed `[layer][head]`.
pub type PerHead<T> = Vec<Vec<T>>;

/// Which attention statistics a forward pass should collect.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Capture {
    /// Trailing chunk rows that form a catalyst prompt; their attention is
    /// summed onto every column except their own.
    pub cap_rows: usize,
    /// Column sums of attention over all chunk rows (all columns).
    pub column_mass: bool,
    /// Attention row of the final chunk row (all columns).
    pub last_row: bool,
}

impl Capture {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn catalyst(cap_rows: usize) -> Self {
        Self {
            cap_rows,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChunkOutput {
    /// `[chunk_len, vocab_size]`
    pub logits: Array2<f32>,
    pub cap_attn_sums: Option<PerHead<Vec<f32>>>,
    pub column_mass: Option<PerHead<Vec<f32>>>,
    pub last_row_attn: Option<PerHead<Vec<f32>>>,
}

pub(crate) fn rms_norm(x: &Array2<f32>, gain: &Array1<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f32>() / row.len() as f32;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        row.iter_mut().zip(gain.iter()).for_each(|(v, g)| *v = *v * inv * g);
    }
    out
}

/// tanh approximation of GELU.
pub(crate) fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

impl Model {
    /// Run `tokens` (at rotary `positions`) causally against the pot, then
    /// append their unrotated keys and values to it.
    pub fn forward_chunk(
        &self,
        pot: &mut MemoryPot,
        tokens: &[u32],
        positions: &[usize],
        capture: &Capture,
    ) -> Result<ChunkOutput> {
        let cfg = &self.config;
        let n = tokens.len();
        if positions.len() != n {
            return Err(Error::Contract(format!(
                "{} tokens but {} positions",
                n,
                positions.len()
            )));
        }
        if capture.cap_rows > n {
            return Err(Error::Contract(format!(
                "cap_rows {} exceeds chunk length {}",
                capture.cap_rows, n
            )));
        }
        if pot.n_layers() != cfg.n_layers || pot.n_heads() != cfg.n_heads || pot.d_head() != cfg.d_head {
            return Err(Error::Contract("pot geometry does not match the model".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {} outside vocab of {}",
                bad, cfg.vocab_size
            )));
        }
        let capacity = pot.capacity();
        let m = pot.occupancy();
        if m + n > capacity {
            return Err(Error::Capacity {
                occupancy: m,
                incoming: n,
                capacity,
            });
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= capacity) {
            return Err(Error::Position { position: p, capacity });
        }
        let increasing = positions.windows(2).all(|w| w[0] < w[1]);
        let after_pot = match (pot.last_slot(), positions.first()) {
            (Some(s), Some(&p)) => p > s,
            _ => true,
        };
        if !increasing || !after_pot {
            return Err(Error::Contract(
                "positions must be strictly increasing and follow the pot's slots".into(),
            ));
        }
        if n == 0 {
            return Ok(ChunkOutput {
                logits: Array2::zeros((0, cfg.vocab_size)),
                cap_attn_sums: None,
                column_mass: None,
                last_row_attn: None,
            });
        }

        let d = cfg.d_model;
        let dh = cfg.d_head;
        let total = m + n;
        let scale = 1.0 / (dh as f32).sqrt();
        let base = cfg.rope_base;
        let stream_rows = n - capture.cap_rows;
        let originals: Vec<usize> = (0..n)
            .map(|i| {
                if i < stream_rows {
                    pot.stream_len() + i
                } else {
                    usize::MAX
                }
            })
            .collect();
        let max_pos = positions[n - 1].max(pot.last_slot().unwrap_or(0));
        pot.note_rope_position(max_pos);

        let mut x = Array2::<f32>::zeros((n, d));
        for (i, &t) in tokens.iter().enumerate() {
            x.row_mut(i).assign(&self.tok_emb.row(t as usize));
        }

        let mut cap_sums = Vec::new();
        let mut col_mass = Vec::new();
        let mut last_rows = Vec::new();

        for (layer, lw) in self.layers.iter().enumerate() {
            let h = rms_norm(&x, &lw.attn_norm);
            let q = h.dot(&lw.wq);
            let k = h.dot(&lw.wk);
            let v = h.dot(&lw.wv);
            let mut attn = Array2::<f32>::zeros((n, d));
            let mut layer_cap = Vec::new();
            let mut layer_mass = Vec::new();
            let mut layer_last = Vec::new();

            for head in 0..cfg.n_heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let store = pot.head(layer, head);
                let mut keys = Array2::<f32>::zeros((total, dh));
                let mut vals = Array2::<f32>::zeros((total, dh));
                for j in 0..m {
                    let mut kr = keys.row_mut(j);
                    let kr = kr.as_slice_mut().expect("contiguous row");
                    kr.copy_from_slice(store.key(j));
                    rotate_in_place(kr, store.slots[j], base);
                    vals.row_mut(j)
                        .as_slice_mut()
                        .expect("contiguous row")
                        .copy_from_slice(store.value(j));
                }
                keys.slice_mut(s![m.., ..]).assign(&k.slice(cols));
                vals.slice_mut(s![m.., ..]).assign(&v.slice(cols));
                let mut qh = q.slice(cols).to_owned();
                for (i, &p) in positions.iter().enumerate() {
                    rotate_in_place(keys.row_mut(m + i).as_slice_mut().expect("contiguous row"), p, base);
                    rotate_in_place(qh.row_mut(i).as_slice_mut().expect("contiguous row"), p, base);
                }

                let mut probs = qh.dot(&keys.t());
                for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
                    let visible = m + i + 1;
                    let row = row.as_slice_mut().expect("contiguous row");
                    let mut max = f32::NEG_INFINITY;
                    for s in row[..visible].iter_mut() {
                        *s *= scale;
                        max = max.max(*s);
                    }
                    let mut sum = 0f32;
                    for s in row[..visible].iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let inv = 1.0 / sum;
                    row[..visible].iter_mut().for_each(|s| *s *= inv);
                    row[visible..].iter_mut().for_each(|s| *s = 0.0);
                }

                if capture.cap_rows > 0 {
                    let cols_kept = total - capture.cap_rows;
                    let mut sums = vec![0f32; cols_kept];
                    for i in n - capture.cap_rows..n {
                        for (acc, p) in sums.iter_mut().zip(probs.row(i).iter()) {
                            *acc += p;
                        }
                    }
                    layer_cap.push(sums);
                }
                if capture.column_mass {
                    let mut sums = vec![0f32; total];
                    for row in probs.rows() {
                        for (acc, p) in sums.iter_mut().zip(row.iter()) {
                            *acc += p;
                        }
                    }
                    layer_mass.push(sums);
                }
                if capture.last_row {
                    layer_last.push(probs.row(n - 1).to_vec());
                }

                attn.slice_mut(cols).assign(&probs.dot(&vals));
            }

            for head in 0..cfg.n_heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                pot.push_rows(
                    layer,
                    head,
                    k.slice(cols),
                    v.slice(cols),
                    tokens,
                    &originals,
                    positions,
                );
            }

            x += &attn.dot(&lw.wo);
            let h2 = rms_norm(&x, &lw.ffn_norm);
            let mut up = h2.dot(&lw.w_up);
            up.mapv_inplace(gelu);
            x += &up.dot(&lw.w_down);

            cap_sums.push(layer_cap);
            col_mass.push(layer_mass);
            last_rows.push(layer_last);
        }
        pot.advance_stream(stream_rows);

        let logits = rms_norm(&x, &self.final_norm).dot(&self.lm_head);
        Ok(ChunkOutput {
            logits,
            cap_attn_sums: (capture.cap_rows > 0).then_some(cap_sums),
            column_mass: capture.column_mass.then_some(col_mass),
            last_row_attn: capture.last_row.then_some(last_rows),
        })
    }

    /// Logits for every position of `tokens` processed from an empty,
    /// sufficiently large pot in chunks of `chunk` tokens.
    pub fn forward_sequence(&self, tokens: &[u32], chunk: usize) -> Result<Array2<f32>> {
        let mut pot = MemoryPot::unbounded(&self.config, tokens.len().max(1));
        let mut logits = Array2::<f32>::zeros((tokens.len(), self.config.vocab_size));
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < tokens.len() {
            let end = (start + chunk).min(tokens.len());
            let positions: Vec<usize> = (start..end).collect();
            let out = self.forward_chunk(&mut pot, &tokens[start..end], &positions, &Capture::none())?;
            logits.slice_mut(s![start..end, ..]).assign(&out.logits);
            start = end;
        }
        Ok(logits)
    }
}

/// Free-function form of [`Model::forward_chunk`].
pub fn forward_chunk(
    model: &Model,
    pot: &mut MemoryPot,
    token_ids: &[u32],
    positions: &[usize],
    capture: &Capture,
) -> Result<ChunkOutput> {
    model.forward_chunk(pot, token_ids, positions, capture)
}
