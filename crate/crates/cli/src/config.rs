use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use g2t_core::corpus::{Side, DEFAULT_ASL_PREFIXES};
use g2t_core::decoding::DecodeConfig;
use g2t_core::metrics::MetricOptions;
use g2t_core::training::TrainConfig;
use g2t_core::transformer::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusMode {
    /// Glosses are used as they are.
    Phoenix,
    /// Gloss prefixes are stripped and rare glosses mapped to `<unk>`.
    Aslg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub raw_dir: String,
    pub prepared_dir: String,
    pub mode: CorpusMode,
    pub asl_prefixes: Vec<String>,
    pub min_freq: u64,
    pub threshold_sides: Vec<Side>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            raw_dir: "data/raw".into(),
            prepared_dir: "data/prepared".into(),
            mode: CorpusMode::Phoenix,
            asl_prefixes: DEFAULT_ASL_PREFIXES.iter().map(|s| s.to_string()).collect(),
            min_freq: 5,
            threshold_sides: vec![Side::Source],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub tie_decoder_embeddings: bool,
    pub scale_embeddings: bool,
    pub max_positions: usize,
    /// word2vec text file for the encoder embeddings.
    pub source_vectors: Option<String>,
    /// word2vec text file for the decoder embeddings.
    pub target_vectors: Option<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            num_layers: m.num_layers,
            d_model: m.d_model,
            num_heads: m.num_heads,
            ffn_dim: m.ffn_dim,
            dropout: m.dropout,
            tie_decoder_embeddings: m.tie_decoder_embeddings,
            scale_embeddings: m.scale_embeddings,
            max_positions: m.max_positions,
            source_vectors: None,
            target_vectors: None,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            d_model: self.d_model,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            tie_decoder_embeddings: self.tie_decoder_embeddings,
            scale_embeddings: self.scale_embeddings,
            max_positions: self.max_positions,
            ..ModelConfig::default()
        }
        .with_vocab(src_vocab, tgt_vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: String,
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: "runs/g2t".into(),
            seeds: vec![1],
        }
    }
}

/// Everything one experiment needs, read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub metrics: MetricOptions,
    pub run: RunSection,
}

/// Keys that default to "unset" and therefore do not appear in a serialized default.
const OPTIONAL_KEYS: &[&str] = &[
    "model.source_vectors",
    "model.target_vectors",
    "train.max_steps",
    "decode.max_length",
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets a dotted key such as `train.initial_lr` from its textual value.
    pub fn set(&self, key: &str, raw: &str) -> Result<Self> {
        let mut root = toml::Value::try_from(self).expect("config serializes");
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| UsageError(format!("override key `{key}` must look like section.field")))?;
        let table = root
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| UsageError(format!("unknown config section `{section}`")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        table.insert(field.to_string(), value);
        root.try_into()
            .map_err(|e| UsageError(format!("cannot set `{key}` to `{raw}`: {e}")).into())
    }

    /// Every key with its default value, one `key = value` line each.
    pub fn key_listing() -> String {
        let root = toml::Value::try_from(RunConfig::default()).expect("config serializes");
        let mut lines = Vec::new();
        if let Some(sections) = root.as_table() {
            for (name, section) in sections {
                if let Some(fields) = section.as_table() {
                    for (field, value) in fields {
                        lines.push(format!("  {name}.{field} = {value}"));
                    }
                }
            }
        }
        for key in OPTIONAL_KEYS {
            lines.push(format!("  {key} = (unset)"));
        }
        lines.sort();
        lines.join("\n")
    }
}

/// Resolves relative paths against the working directory.
pub fn resolve(workdir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        workdir.join(p)
    }
}

/// Builds the effective configuration: defaults, then the config file, then
/// `key=value` overrides.
pub fn load_config(workdir: &Path, file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(f) => {
            let path = workdir.join(f);
            let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read config {}", path.display()))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| UsageError(format!("override `{o}` must look like key=value")))?;
        cfg = cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}
