//! Byte-level tokenizer: byte `b` maps to id `b + 1`, id 0 is BOS.

use crate::error::{Error, Result};

pub const BOS_ID: u32 = 0;
pub const VOCAB_SIZE: usize = 257;
pub const NEWLINE_ID: u32 = b'\n' as u32 + 1;

#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(|b| b as u32 + 1).collect()
    }

    /// Lossy decode; BOS and out-of-range ids are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter(|&&id| (1..=256).contains(&id))
            .map(|&id| (id - 1) as u8)
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }
}

/// Parse a pre-tokenized stream: one decimal id per line, blank lines ignored.
pub fn parse_id_stream(text: &str, vocab_size: usize) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: u32 = line.parse().map_err(|_| {
            Error::Format(format!("line {}: '{}' is not a token id", lineno + 1, line))
        })?;
        if id as usize >= vocab_size {
            return Err(Error::Format(format!(
                "line {}: token id {} outside vocab of {}",
                lineno + 1,
                id,
                vocab_size
            )));
        }
        ids.push(id);
    }
    Ok(ids)
}
