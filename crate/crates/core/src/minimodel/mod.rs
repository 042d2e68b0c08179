//! Miniature decoder-only transformer.
//!
//! Pre-norm blocks with RMS normalisation, bias-free projections, a two-matrix
//! GELU feed-forward and rotary attention. Keys are rotated at attention time
//! so a [`MemoryPot`](crate::mempot::MemoryPot) can hold them unrotated.

mod forward;
pub mod rope;
pub mod weights;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use forward::{forward_chunk, Capture, ChunkOutput, PerHead};
pub use rope::apply_rope;

pub const INIT_STD: f64 = 0.02;
pub const RMS_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f32,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_rope_base() -> f32 {
    10000.0
}

impl ModelConfig {
    /// Config with `d_head = d_model / n_heads` and `d_ff = 4 * d_model`.
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize, init_seed: u64) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_head: d_model.checked_div(n_heads).unwrap_or(0),
            d_ff: 4 * d_model,
            vocab_size,
            rope_base: default_rope_base(),
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::config("n_layers", "must be at least 1"));
        }
        if self.n_heads == 0 {
            return Err(Error::config("n_heads", "must be at least 1"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "d_model",
                format!("{} not divisible by n_heads {}", self.d_model, self.n_heads),
            ));
        }
        if self.d_head * self.n_heads != self.d_model {
            return Err(Error::config(
                "d_head",
                format!(
                    "d_model {} != n_heads {} * d_head {}",
                    self.d_model, self.n_heads, self.d_head
                ),
            ));
        }
        if self.d_head == 0 || !self.d_head.is_multiple_of(2) {
            return Err(Error::config(
                "d_head",
                format!("must be even and positive, got {}", self.d_head),
            ));
        }
        if self.d_ff == 0 {
            return Err(Error::config("d_ff", "must be at least 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", format!("must be >= 2, got {}", self.vocab_size)));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(Error::config("rope_base", format!("must be positive, got {}", self.rope_base)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Array1<f32>,
    /// Projections are stored `[in, out]` and applied as `x · W`.
    pub wq: Array2<f32>,
    pub wk: Array2<f32>,
    pub wv: Array2<f32>,
    pub wo: Array2<f32>,
    pub ffn_norm: Array1<f32>,
    pub w_up: Array2<f32>,
    pub w_down: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub tok_emb: Array2<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Array1<f32>,
    pub lm_head: Array2<f32>,
}

fn normal_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Array2<f32> {
    let mut data = vec![0f32; rows * cols];
    rng.fill_normal(&mut data, INIT_STD);
    Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer")
}

impl Model {
    /// Seeded initialisation.
    ///
    /// One SplitMix64 stream seeded with `init_seed` fills, in order and
    /// row-major: `tok_emb`, then per layer `wq wk wv wo w_up w_down`, then
    /// `lm_head`. Norm gains are 1 and consume no samples.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = SplitMix64::new(config.init_seed);
        let tok_emb = normal_matrix(&mut rng, config.vocab_size, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: Array1::ones(d),
                wq: normal_matrix(&mut rng, d, d),
                wk: normal_matrix(&mut rng, d, d),
                wv: normal_matrix(&mut rng, d, d),
                wo: normal_matrix(&mut rng, d, d),
                ffn_norm: Array1::ones(d),
                w_up: normal_matrix(&mut rng, d, config.d_ff),
                w_down: normal_matrix(&mut rng, config.d_ff, d),
            })
            .collect();
        let lm_head = normal_matrix(&mut rng, d, config.vocab_size);
        Ok(Self {
            config,
            tok_emb,
            layers,
            final_norm: Array1::ones(d),
            lm_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn all_finite(&self) -> bool {
        let m = |a: &Array2<f32>| a.iter().all(|v| v.is_finite());
        let g = |a: &Array1<f32>| a.iter().all(|v| v.is_finite());
        m(&self.tok_emb)
            && m(&self.lm_head)
            && g(&self.final_norm)
            && self.layers.iter().all(|l| {
                g(&l.attn_norm)
                    && g(&l.ffn_norm)
                    && [&l.wq, &l.wk, &l.wv, &l.wo, &l.w_up, &l.w_down].into_iter().all(m)
            })
    }
}

/// Free-function form of [`Model::init`].
pub fn init_model(config: ModelConfig) -> Result<Model> {
    Model::init(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig::new(2, 2, 8, 16, 7)
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::init(small()).unwrap();
        let b = Model::init(small()).unwrap();
        assert_eq!(a, b);
        let bits = |m: &Model| m.tok_emb.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn different_seeds_differ() {
        let a = Model::init(small()).unwrap();
        let mut cfg = small();
        cfg.init_seed = 8;
        let b = Model::init(cfg).unwrap();
        assert_ne!(a.tok_emb, b.tok_emb);
    }

    #[test]
    fn indivisible_width_rejected() {
        let mut cfg = small();
        cfg.d_model = 7;
        cfg.d_head = 3;
        assert!(matches!(Model::init(cfg), Err(Error::Config { field: "d_model", .. })));
    }

    #[test]
    fn odd_head_dim_rejected() {
        let cfg = ModelConfig::new(1, 2, 6, 16, 0);
        assert!(matches!(Model::init(cfg), Err(Error::Config { field: "d_head", .. })));
    }

    #[test]
    fn tiny_vocab_rejected() {
        let mut cfg = small();
        cfg.vocab_size = 1;
        assert!(Model::init(cfg).is_err());
    }

    #[test]
    fn weights_are_finite_with_plausible_scale() {
        let m = Model::init(ModelConfig::new(1, 4, 64, 257, 1)).unwrap();
        assert!(m.all_finite());
        let n = m.tok_emb.len() as f64;
        let var = m.tok_emb.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - INIT_STD).abs() < 0.002, "std {}", var.sqrt());
        assert!(m.final_norm.iter().all(|&g| g == 1.0));
    }
}
