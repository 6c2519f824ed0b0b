#![allow(dead_code)]

use std::path::Path;
use std::sync::OnceLock;

use tempfile::TempDir;

use restore_cli::commands::{ingest, split, train_lstm, train_ngram};
use restore_cli::config::AppConfig;
use restore_cli::OutputFormat;

pub const TEXT: OutputFormat = OutputFormat::Text;

/// A config rooted in `root` with a model small enough to train in seconds.
pub fn small_config(root: &Path) -> AppConfig {
    let mut c = AppConfig::default();
    c.paths.corpus_dir = root.join("corpus");
    c.paths.artifacts_dir = root.join("artifacts");
    c.split.seed = 5;
    c.split.valid_fraction = 0.1;
    c.lm.embed_dim = 8;
    c.lm.hidden_dim = 16;
    c.lm.num_layers = 1;
    c.lm.bptt_len = 12;
    c.lm.batch_size = 8;
    c.lm.learning_rate = 5e-3;
    c.lm.max_epochs = 2;
    c.lm.dropout_rate = 0.0;
    c.eval.pool_size = 20;
    c
}

pub struct Pipeline {
    pub dir: TempDir,
    pub config: AppConfig,
}

/// Synthetic corpus taken through ingest, split and both trainers. Built
/// once per test binary.
pub fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let config = small_config(dir.path());
        ingest(&config, Some(60), TEXT).unwrap();
        split(&config, TEXT).unwrap();
        train_ngram(&config, TEXT).unwrap();
        train_lstm(&config, TEXT).unwrap();
        Pipeline { dir, config }
    })
}

/// Value of a `key: value` line.
pub fn field<'a>(out: &'a str, key: &str) -> Option<&'a str> {
    out.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix(": "))
}

/// Copies the split outputs of the shared pipeline into a fresh directory.
pub fn copy_artifacts(to: &Path) -> AppConfig {
    let p = pipeline();
    let config = small_config(to);
    std::fs::create_dir_all(&config.paths.artifacts_dir).unwrap();
    for name in ["vocab.txt", "train.tok", "valid.tok", "test.tok", "ngram.model", "lstm.ckpt"] {
        std::fs::copy(
            p.config.paths.artifacts_dir.join(name),
            config.paths.artifacts_dir.join(name),
        )
        .unwrap();
    }
    config
}
