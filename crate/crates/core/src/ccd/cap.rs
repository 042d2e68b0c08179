use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{ByteTokenizer, NEWLINE_ID};

/// Catalyst prompt templates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapPreset {
    /// Placeholder: newlines only.
    P,
    /// Unrelated sentences.
    U,
    /// Question-aware summarisation request.
    Q,
    /// General summarisation request.
    #[default]
    G,
    G1,
    G2,
    /// Caller-supplied text.
    Custom,
}

impl CapPreset {
    pub fn template(self) -> &'static str {
        match self {
            CapPreset::P => "\n",
            CapPreset::U => "The sky is blue. The sun is yellow. Here we go. There and back again.",
            CapPreset::Q => "Considering the following question, summarize the critical points highlighted in this section. Question: {question}",
            CapPreset::G => "Summarize the critical points highlighted in this section.",
            CapPreset::G1 => "Summarize this section.",
            CapPreset::G2 => "Highlight the critical points from this section.",
            CapPreset::Custom => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalystPrompt {
    pub preset: CapPreset,
    pub token_ids: Vec<u32>,
    pub question_text: Option<String>,
}

impl CatalystPrompt {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Encode a preset to exactly `cap_len` ids.
///
/// Text longer than `cap_len` is cut on the right; shorter text is
/// left-padded with newlines so the prompt ends at the capacity boundary.
/// A `Q` prompt needs `cap_len` of roughly 100 + question bytes to keep the
/// question itself.
pub fn build_cap(
    preset: CapPreset,
    tokenizer: &ByteTokenizer,
    text: Option<&str>,
    cap_len: usize,
) -> Result<CatalystPrompt> {
    if cap_len == 0 {
        return Err(Error::config("cap_len", "a catalyst prompt needs at least one token"));
    }
    let mut ids = match preset {
        CapPreset::P => vec![NEWLINE_ID; cap_len],
        CapPreset::Q => {
            let q = text.ok_or(Error::MissingArgument("question_text for the Q catalyst preset"))?;
            tokenizer.encode(&preset.template().replace("{question}", q))
        }
        CapPreset::Custom => {
            let t = text.ok_or(Error::MissingArgument("cap_text for the custom catalyst preset"))?;
            tokenizer.encode(t)
        }
        other => tokenizer.encode(other.template()),
    };
    if ids.len() > cap_len {
        ids.truncate(cap_len);
    } else if ids.len() < cap_len {
        let mut padded = vec![NEWLINE_ID; cap_len - ids.len()];
        padded.extend(ids);
        ids = padded;
    }
    Ok(CatalystPrompt {
        preset,
        token_ids: ids,
        question_text: if preset == CapPreset::Q { text.map(str::to_owned) } else { None },
    })
}
