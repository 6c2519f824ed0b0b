//! Command-line driver and HTTP service around `restore-core`.

pub mod commands;
pub mod config;
pub mod server;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use restore_core::eval::EvalError;
use restore_core::ingest::IngestError;
use restore_core::lm::checkpoint::CheckpointError;
use restore_core::lm::LmError;
use restore_core::ngram::NGramError;
use restore_core::tokenizer::TokenizeError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {1}", .0.display())]
    Io(PathBuf, #[source] io::Error),
    #[error("missing input {}: run `{1}` first", .0.display())]
    MissingInput(PathBuf, &'static str),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    NGram(#[from] NGramError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Usage(String),
    #[error("server: {0}")]
    Server(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    /// `key: value` lines.
    #[default]
    Text,
    /// Tab-separated header and value rows.
    Machine,
}

/// Renders `key: value` pairs in the requested format.
pub fn render_pairs(pairs: &[(String, String)], format: OutputFormat) -> String {
    match format {
        OutputFormat::Text => pairs.iter().map(|(k, v)| format!("{k}: {v}\n")).collect(),
        OutputFormat::Machine => {
            let keys: Vec<&str> = pairs.iter().map(|(k, _)| k.as_str()).collect();
            let vals: Vec<&str> = pairs.iter().map(|(_, v)| v.as_str()).collect();
            format!("{}\n{}\n", keys.join("\t"), vals.join("\t"))
        }
    }
}
