use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use restore_core::lm::{CellKind, LmConfig, OptimizerKind};
use restore_core::ngram::Smoothing;

use crate::CliError;

/// Everything the commands need, read from a TOML file. Missing sections
/// fall back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub paths: Paths,
    pub split: SplitSettings,
    pub tokenizer: TokenizerSettings,
    pub lm: LmSettings,
    pub ngram: NGramSettings,
    pub eval: EvalSettings,
    pub server: ServerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of scraped HTML pages.
    pub corpus_dir: PathBuf,
    /// Where archives, vocabularies, token streams and models go.
    pub artifacts_dir: PathBuf,
    /// CSS selector for the transliteration container, if pages have chrome.
    pub content_selector: Option<String>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: PathBuf::from("corpus"),
            artifacts_dir: PathBuf::from("artifacts"),
            content_selector: None,
        }
    }
}

impl Paths {
    pub fn archive(&self) -> PathBuf {
        self.artifacts_dir.join("archive")
    }

    pub fn vocab(&self) -> PathBuf {
        self.artifacts_dir.join("vocab.txt")
    }

    pub fn tokens(&self, part: &str) -> PathBuf {
        self.artifacts_dir.join(format!("{part}.tok"))
    }

    pub fn ngram(&self) -> PathBuf {
        self.artifacts_dir.join("ngram.model")
    }

    pub fn lstm(&self) -> PathBuf {
        self.artifacts_dir.join("lstm.ckpt")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub test_fraction: f64,
    /// Share of training documents held out for early stopping.
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            test_fraction: 0.1,
            valid_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSettings {
    pub collapse_breaks: bool,
    pub min_count: u64,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        TokenizerSettings {
            collapse_breaks: true,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bptt_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    /// `lstm` or `rnn`.
    pub cell: String,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub clip_norm: f64,
    pub reset_state_on_eos: bool,
}

impl Default for LmSettings {
    fn default() -> Self {
        let c = LmConfig::new(1);
        LmSettings {
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            num_layers: c.num_layers,
            bptt_len: c.bptt_len,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            max_epochs: c.max_epochs,
            early_stop_patience: c.early_stop_patience,
            seed: c.seed,
            dropout_rate: c.dropout_rate,
            cell: c.cell.as_str().into(),
            optimizer: c.optimizer.as_str().into(),
            clip_norm: c.clip_norm,
            reset_state_on_eos: c.reset_state_on_eos,
        }
    }
}

impl LmSettings {
    pub fn to_config(&self, vocab_size: usize) -> Result<LmConfig, CliError> {
        let bad = |what: &str, v: &str| CliError::Config(format!("unknown {what} `{v}`"));
        let config = LmConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            bptt_len: self.bptt_len,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            seed: self.seed,
            dropout_rate: self.dropout_rate,
            cell: CellKind::parse(&self.cell).ok_or_else(|| bad("cell", &self.cell))?,
            optimizer: OptimizerKind::parse(&self.optimizer).ok_or_else(|| bad("optimizer", &self.optimizer))?,
            clip_norm: self.clip_norm,
            reset_state_on_eos: self.reset_state_on_eos,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NGramSettings {
    pub order: usize,
    pub alpha: f64,
    /// `add-alpha` or `unigram-backoff`.
    pub smoothing: String,
}

impl Default for NGramSettings {
    fn default() -> Self {
        NGramSettings {
            order: 2,
            alpha: 0.01,
            smoothing: Smoothing::AddAlpha.as_str().into(),
        }
    }
}

impl NGramSettings {
    pub fn smoothing(&self) -> Result<Smoothing, CliError> {
        Smoothing::parse(&self.smoothing)
            .ok_or_else(|| CliError::Config(format!("unknown smoothing `{}`", self.smoothing)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub mask_index: usize,
    pub min_len: usize,
    pub pool_size: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            mask_index: 5,
            min_len: 10,
            pool_size: restore_core::eval::DEFAULT_POOL_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub bind: String,
    /// `lstm` or `ngram`.
    pub model: String,
}

impl Default for ServerSettings {
    fn default() -> Self {
        ServerSettings {
            bind: "127.0.0.1:8080".into(),
            model: "lstm".into(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = AppConfig::default();
        c.paths.content_selector = Some("div.text".into());
        c.lm.learning_rate = 0.003;
        c.ngram.smoothing = "unigram-backoff".into();
        c.server.bind = "0.0.0.0:9000".into();
        assert_eq!(AppConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_files_use_defaults() {
        let c = AppConfig::from_toml("[lm]\nhidden_dim = 64\n").unwrap();
        assert_eq!(c.lm.hidden_dim, 64);
        assert_eq!(c.lm.embed_dim, LmSettings::default().embed_dim);
        assert_eq!(c.ngram, NGramSettings::default());
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(AppConfig::from_toml("[lm]\nhiden_dim = 64\n").is_err());
        let mut c = AppConfig::default();
        c.lm.cell = "gru".into();
        assert!(c.lm.to_config(20).is_err());
        assert!(LmSettings::default().to_config(20).is_ok());
    }
}
