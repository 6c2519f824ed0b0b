//! Gap restoration for tokenized transliterations: corpus ingestion, a
//! tokenizer, n-gram and recurrent language models, and ranking evaluation.

pub mod eval;
pub mod ingest;
pub mod lm;
pub mod model;
pub mod ngram;
pub mod ranking;
pub mod tokenizer;
pub mod synth;
