//! `MPKV1` weight files.
//!
//! Layout: magic `MPKV1\0`, u32 LE tensor count, then per tensor a u16 LE
//! name length, the UTF-8 name, a u8 rank, `rank` u32 LE dims and the f32 LE
//! payload in row-major order.
//!
//! Besides the weights, three `meta.*` tensors carry the configuration fields
//! that shapes cannot express: `meta.n_heads` `[1]`, `meta.rope_base` `[1]` and
//! `meta.init_seed` `[4]` (the seed as four 16-bit limbs, low first).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{LayerWeights, Model, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"MPKV1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }
}

fn mat(name: String, a: &Array2<f32>) -> Tensor {
    Tensor::new(name, a.shape().to_vec(), a.iter().copied().collect())
}

fn vec1(name: String, a: &Array1<f32>) -> Tensor {
    Tensor::new(name, vec![a.len()], a.to_vec())
}

impl Model {
    /// All tensors in file order.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let c = &self.config;
        let seed = c.init_seed;
        let limbs = (0..4).map(|i| ((seed >> (16 * i)) & 0xFFFF) as f32).collect();
        let mut out = vec![
            Tensor::new("meta.n_heads", vec![1], vec![c.n_heads as f32]),
            Tensor::new("meta.rope_base", vec![1], vec![c.rope_base]),
            Tensor::new("meta.init_seed", vec![4], limbs),
            mat("tok_emb".into(), &self.tok_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(vec1(format!("layers.{i}.attn_norm"), &l.attn_norm));
            out.push(mat(format!("layers.{i}.wq"), &l.wq));
            out.push(mat(format!("layers.{i}.wk"), &l.wk));
            out.push(mat(format!("layers.{i}.wv"), &l.wv));
            out.push(mat(format!("layers.{i}.wo"), &l.wo));
            out.push(vec1(format!("layers.{i}.ffn_norm"), &l.ffn_norm));
            out.push(mat(format!("layers.{i}.w_up"), &l.w_up));
            out.push(mat(format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(vec1("final_norm".into(), &self.final_norm));
        out.push(mat("lm_head".into(), &self.lm_head));
        out
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let mut by_name: HashMap<String, Tensor> = HashMap::new();
        for t in tensors {
            if by_name.contains_key(&t.name) {
                return Err(Error::Format(format!("duplicate tensor '{}'", t.name)));
            }
            by_name.insert(t.name.clone(), t);
        }
        fn take_from(map: &mut HashMap<String, Tensor>, name: &str) -> Result<Tensor> {
            map.remove(name)
                .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
        }
        let scalar = |t: Tensor| -> Result<f32> {
            match t.data.as_slice() {
                [v] => Ok(*v),
                _ => Err(Error::Format(format!("'{}' must hold one value", t.name))),
            }
        };
        let n_heads = scalar(take_from(&mut by_name, "meta.n_heads")?)? as usize;
        let rope_base = scalar(take_from(&mut by_name, "meta.rope_base")?)?;
        let seed_t = take_from(&mut by_name, "meta.init_seed")?;
        if seed_t.data.len() != 4 {
            return Err(Error::Format("'meta.init_seed' must hold four limbs".into()));
        }
        let init_seed = seed_t
            .data
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &v)| acc | ((v as u64 & 0xFFFF) << (16 * i)));

        let tok_emb = to_mat(take_from(&mut by_name, "tok_emb")?)?;
        let (vocab_size, d_model) = tok_emb.dim();
        let mut layers = Vec::new();
        while by_name.contains_key(&format!("layers.{}.wq", layers.len())) {
            let i = layers.len();
            let mut get = |suffix: &str| take_from(&mut by_name, &format!("layers.{i}.{suffix}"));
            layers.push(LayerWeights {
                attn_norm: to_vec(get("attn_norm")?)?,
                wq: to_mat(get("wq")?)?,
                wk: to_mat(get("wk")?)?,
                wv: to_mat(get("wv")?)?,
                wo: to_mat(get("wo")?)?,
                ffn_norm: to_vec(get("ffn_norm")?)?,
                w_up: to_mat(get("w_up")?)?,
                w_down: to_mat(get("w_down")?)?,
            });
        }
        let final_norm = to_vec(take_from(&mut by_name, "final_norm")?)?;
        let lm_head = to_mat(take_from(&mut by_name, "lm_head")?)?;
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format(format!("unexpected tensor '{extra}'")));
        }
        let d_ff = layers.first().map(|l| l.w_up.ncols()).unwrap_or(0);
        let config = ModelConfig {
            n_layers: layers.len(),
            n_heads,
            d_model,
            d_head: d_model.checked_div(n_heads).unwrap_or(0),
            d_ff,
            vocab_size,
            rope_base,
            init_seed,
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("weights describe an invalid model: {e}")))?;

        let sq = (d_model, d_model);
        let shape_ok = layers.iter().all(|l| {
            l.attn_norm.len() == d_model
                && l.ffn_norm.len() == d_model
                && l.wq.dim() == sq
                && l.wk.dim() == sq
                && l.wv.dim() == sq
                && l.wo.dim() == sq
                && l.w_up.dim() == (d_model, d_ff)
                && l.w_down.dim() == (d_ff, d_model)
        }) && final_norm.len() == d_model
            && lm_head.dim() == (d_model, vocab_size);
        if !shape_ok {
            return Err(Error::Format("tensor shapes are inconsistent".into()));
        }
        let model = Model {
            config,
            tok_emb,
            layers,
            final_norm,
            lm_head,
        };
        if !model.all_finite() {
            return Err(Error::Format("non-finite weight value".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &self.to_tensors())?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_tensors(read_tensors(&mut bytes.as_slice())?)
    }
}

fn to_mat(t: Tensor) -> Result<Array2<f32>> {
    match t.dims.as_slice() {
        &[r, c] => Array2::from_shape_vec((r, c), t.data)
            .map_err(|e| Error::Format(format!("'{}': {e}", t.name))),
        _ => Err(Error::Format(format!("'{}' must be rank 2", t.name))),
    }
}

fn to_vec(t: Tensor) -> Result<Array1<f32>> {
    match t.dims.as_slice() {
        &[_] => Ok(Array1::from(t.data)),
        _ => Err(Error::Format(format!("'{}' must be rank 1", t.name))),
    }
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[Tensor]) -> Result<()> {
    let io = |e| Error::io("<weights>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name '{}' too long", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Format(format!("tensor '{}' rank too large", t.name)))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!("tensor '{}' dims do not match data", t.name)));
        }
        w.write_all(&name_len.to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&[rank]).map_err(io)?;
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            w.write_all(&d.to_le_bytes()).map_err(io)?;
        }
        let mut payload = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload).map_err(io)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("truncated file while reading {what}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>> {
    let magic = read_exact(r, MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic, not an MPKV1 file".into()));
    }
    let count = read_u32(r, "tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nl = read_exact(r, 2, "name length")?;
        let name_len = u16::from_le_bytes([nl[0], nl[1]]) as usize;
        let name = String::from_utf8(read_exact(r, name_len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_exact(r, 1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r, "dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor '{name}' is too large")))?;
        let raw = read_exact(r, numel, &format!("data of '{name}'"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(Tensor { name, dims, data });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io("<weights>", e))? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}
