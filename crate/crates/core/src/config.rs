//! The JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::DEFAULT_QUERY;
use crate::error::{Error, Result};
use crate::mempot::PotConfig;
use crate::minimodel::{Model, ModelConfig};
use crate::oracle::LayerChoice;
use crate::policies::{PolicyKind, PolicySpec};
use crate::tokenizer::{parse_id_stream, ByteTokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    /// Path to an MPKV1 weight file.
    Weights { weights: PathBuf },
    /// Seeded random initialisation.
    Config(ModelConfig),
}

impl ModelSource {
    pub fn load(&self) -> Result<Model> {
        match self {
            ModelSource::Weights { weights } => Model::load(weights),
            ModelSource::Config(c) => Model::init(c.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Nih,
    Hitrate,
    #[default]
    Consume,
    Generate,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nih" => Ok(Task::Nih),
            "hitrate" => Ok(Task::Hitrate),
            "consume" => Ok(Task::Consume),
            "generate" => Ok(Task::Generate),
            _ => Err(Error::config("task", format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// UTF-8 text, byte-tokenised.
    #[default]
    Text,
    /// One decimal token id per line.
    Ids,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    /// Context stream; seeded filler is used when absent.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub input_format: InputFormat,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            input: None,
            input_format: InputFormat::default(),
            output_dir: default_output_dir(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    /// Filler length when no input file is given; defaults to 4·(|M| − |P|).
    #[serde(default)]
    pub length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NihConfig {
    /// Policies to compare; defaults to the top-level `policy`.
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_depths")]
    pub depths: Vec<f64>,
    #[serde(default = "default_query")]
    pub query_text: String,
}

fn default_lengths() -> Vec<usize> {
    vec![1000]
}

fn default_depths() -> Vec<f64> {
    vec![0.1, 0.5, 0.9]
}

fn default_query() -> String {
    DEFAULT_QUERY.to_owned()
}

impl Default for NihConfig {
    fn default() -> Self {
        Self {
            policies: Vec::new(),
            lengths: default_lengths(),
            depths: default_depths(),
            query_text: default_query(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HitrateConfig {
    /// Policies measured against the top-level `policy`.
    #[serde(default = "default_comparators")]
    pub comparators: Vec<PolicySpec>,
    #[serde(default)]
    pub layer: LayerChoice,
    /// Oracle top-k; defaults to |C|.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_query")]
    pub query_text: String,
}

fn default_comparators() -> Vec<PolicySpec> {
    vec![PolicySpec::new(PolicyKind::Random)]
}

impl Default for HitrateConfig {
    fn default() -> Self {
        Self {
            comparators: default_comparators(),
            layer: LayerChoice::default(),
            k: None,
            query_text: default_query(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default = "default_max_new")]
    pub max_new: usize,
}

fn default_max_new() -> usize {
    32
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            max_new: default_max_new(),
        }
    }
}

fn default_policy() -> PolicySpec {
    PolicySpec::new(PolicyKind::Ccd)
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    pub pot: PotConfig,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub nih: NihConfig,
    #[serde(default)]
    pub hitrate: HitrateConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelSource::Config(c) => c.validate()?,
            ModelSource::Weights { weights } if !weights.is_file() => {
                return Err(Error::config(
                    "model.weights",
                    format!("weight file '{}' does not exist", weights.display()),
                ));
            }
            ModelSource::Weights { .. } => {}
        }
        self.policy.validate(&self.pot)?;
        if let Some(input) = self.io.input.as_ref().filter(|p| !p.is_file()) {
            return Err(Error::config(
                "io.input",
                format!("input file '{}' does not exist", input.display()),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.stream.length == Some(0) {
            return Err(Error::config("stream.length", "must be at least 1"));
        }
        for p in self.nih.policies.iter().chain(&self.hitrate.comparators) {
            p.validate(&self.pot)?;
        }
        if let Some(d) = self.nih.depths.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::config("nih.depths", format!("{d} is outside [0, 1]")));
        }
        if self.hitrate.k == Some(0) {
            return Err(Error::config("hitrate.k", "must be at least 1"));
        }
        Ok(())
    }

    /// Context stream for `seed`: the input file, else seeded filler.
    pub fn stream(&self, seed: u64, vocab: usize) -> Result<Vec<u32>> {
        match &self.io.input {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                match self.io.input_format {
                    InputFormat::Text => Ok(ByteTokenizer.encode(&text)),
                    InputFormat::Ids => parse_id_stream(&text, vocab),
                }
            }
            None => {
                let len = self
                    .stream
                    .length
                    .unwrap_or(4 * self.pot.trigger_occupancy());
                Ok(crate::bench::filler_bytes(seed, len).iter().map(|&b| b as u32 + 1).collect())
            }
        }
    }

    pub fn nih_policies(&self) -> Vec<PolicySpec> {
        if self.nih.policies.is_empty() {
            vec![self.policy.clone()]
        } else {
            self.nih.policies.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"n_layers": 1, "n_heads": 2, "d_model": 16, "d_head": 8, "d_ff": 64, "vocab_size": 257},
        "pot": {"capacity": 32, "cap_len": 4, "compressed_size": 8}
    }"#;

    #[test]
    fn minimal_config_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.task, Task::Consume);
        assert_eq!(c.policy.kind, PolicyKind::Ccd);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.pot.nuc_ratio, 0.5);
        assert_eq!(c.stream(0, 257).unwrap().len(), 4 * 28);
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_fields_named() {
        let bad = MINIMAL.replace("\"compressed_size\": 8", "\"compressed_size\": 30");
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("compressed_size"), "{err}");
        let bad = MINIMAL.replace("\"pot\"", "\"seeds\": [], \"pot\"");
        assert!(RunConfig::from_json(&bad).unwrap_err().to_string().contains("seeds"));
        let bad = MINIMAL.replace("{\"n_layers\"", "{\"weights\": \"/nonexistent.mpkv\"}, \"x\": {\"n_layers\"");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn missing_weights_reported() {
        let bad = MINIMAL.replace(
            r#"{"n_layers": 1, "n_heads": 2, "d_model": 16, "d_head": 8, "d_ff": 64, "vocab_size": 257}"#,
            r#"{"weights": "/nonexistent/w.mpkv"}"#,
        );
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("model.weights"), "{err}");
    }

    #[test]
    fn task_names() {
        for (s, t) in [("nih", Task::Nih), ("hitrate", Task::Hitrate), ("generate", Task::Generate)] {
            assert_eq!(Task::parse(s).unwrap(), t);
        }
        assert!(Task::parse("train").is_err());
    }
}
