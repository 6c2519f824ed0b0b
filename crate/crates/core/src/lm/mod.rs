//! Autoregressive recurrent language model, written out by hand: embedding,
//! a stack of LSTM (or plain tanh) cells, and a softmax output projection,
//! trained with truncated backpropagation through time.

mod cell;
pub mod checkpoint;
mod matrix;
pub mod optim;
mod params;
mod train;

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use cell::{lstm_step, ForwardCache, LayerState, LstmState};
pub use matrix::Matrix;
pub use optim::{clip_grad_norm, sgd_update, Adam, OptimizerKind};
pub use params::{init_params, LayerParams, LstmParams};
pub use train::{train, train_with_progress, EpochLog, TrainLog};

use crate::model::{LanguageModel, ProbVector};
use crate::tokenizer::{Reserved, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum LmError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("training diverged in epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("no training or validation data")]
    EmptyData,
    #[error("token id {0} is outside a vocabulary of {1}")]
    IdOutOfRange(u32, usize),
    #[error("parameter shapes do not match the configuration: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    /// `h' = tanh(W_i x + W_h h + b)`
    Rnn,
}

impl CellKind {
    pub fn gate_count(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Rnn => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Rnn => "rnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lstm" => Some(CellKind::Lstm),
            "rnn" => Some(CellKind::Rnn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bptt_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Applied to every non-recurrent connection during training.
    pub dropout_rate: f64,
    pub cell: CellKind,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Zero the state whenever `<EOS>` is fed, so training sees each line
    /// exactly as line-level scoring does.
    pub reset_state_on_eos: bool,
}

impl LmConfig {
    pub fn new(vocab_size: usize) -> Self {
        LmConfig {
            vocab_size,
            embed_dim: 128,
            hidden_dim: 256,
            num_layers: 2,
            bptt_len: 35,
            batch_size: 20,
            learning_rate: 1e-3,
            max_epochs: 40,
            early_stop_patience: 3,
            seed: 0,
            dropout_rate: 0.3,
            cell: CellKind::Lstm,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            reset_state_on_eos: true,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("dimensions must be positive");
        }
        if self.bptt_len < 2 {
            return bad("bptt_len must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        Ok(())
    }

    /// `key=value` lines; floats use the shortest round-tripping form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("vocab_size", self.vocab_size.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("num_layers", self.num_layers.to_string());
        kv("bptt_len", self.bptt_len.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("early_stop_patience", self.early_stop_patience.to_string());
        kv("seed", self.seed.to_string());
        kv("dropout_rate", self.dropout_rate.to_string());
        kv("cell", self.cell.as_str().to_string());
        kv("optimizer", self.optimizer.as_str().to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("reset_state_on_eos", self.reset_state_on_eos.to_string());
        s
    }

    pub fn from_text(text: &str) -> Result<Self, LmError> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LmError::InvalidConfig(format!("bad line `{line}`")))?;
            map.insert(k.trim(), v.trim());
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T, LmError> {
            map.get(key)
                .ok_or_else(|| LmError::InvalidConfig(format!("missing `{key}`")))?
                .parse()
                .map_err(|_| LmError::InvalidConfig(format!("bad value for `{key}`")))
        }
        let cell: String = get(&map, "cell")?;
        let optimizer: String = get(&map, "optimizer")?;
        let config = LmConfig {
            vocab_size: get(&map, "vocab_size")?,
            embed_dim: get(&map, "embed_dim")?,
            hidden_dim: get(&map, "hidden_dim")?,
            num_layers: get(&map, "num_layers")?,
            bptt_len: get(&map, "bptt_len")?,
            batch_size: get(&map, "batch_size")?,
            learning_rate: get(&map, "learning_rate")?,
            max_epochs: get(&map, "max_epochs")?,
            early_stop_patience: get(&map, "early_stop_patience")?,
            seed: get(&map, "seed")?,
            dropout_rate: get(&map, "dropout_rate")?,
            cell: CellKind::parse(&cell)
                .ok_or_else(|| LmError::InvalidConfig(format!("unknown cell `{cell}`")))?,
            optimizer: OptimizerKind::parse(&optimizer)
                .ok_or_else(|| LmError::InvalidConfig(format!("unknown optimizer `{optimizer}`")))?,
            clip_norm: get(&map, "clip_norm")?,
            reset_state_on_eos: get(&map, "reset_state_on_eos")?,
        };
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for LmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// A trained (or freshly initialized) model with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    config: LmConfig,
    params: LstmParams,
}

impl LstmModel {
    pub fn new(config: LmConfig) -> Result<Self, LmError> {
        config.validate()?;
        let params = init_params(&config, config.seed);
        Ok(LstmModel { config, params })
    }

    pub fn from_parts(config: LmConfig, params: LstmParams) -> Result<Self, LmError> {
        config.validate()?;
        let expected = LstmParams::zeros(&config);
        for ((name, want), (_, got)) in expected.tensors().iter().zip(params.tensors()) {
            if want.shape() != got.shape() {
                return Err(LmError::ShapeMismatch(format!(
                    "{name}: expected {:?}, got {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        if expected.layers.len() != params.layers.len() || expected.cell != params.cell {
            return Err(LmError::ShapeMismatch("layer count or cell kind".into()));
        }
        Ok(LstmModel { config, params })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LstmParams {
        &mut self.params
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState::for_params(&self.params)
    }

    fn reset_token(&self) -> Option<TokenId> {
        self.config.reset_state_on_eos.then(|| Reserved::Eos.id())
    }

    /// Feeds `input` and returns the distribution of the token after it.
    pub fn advance(&self, state: &mut LstmState, input: TokenId) -> ProbVector {
        if self.reset_token() == Some(input) {
            *state = self.zero_state();
        }
        let emb = self.params.embedding.row(input.index());
        match lstm_step(&self.params, emb, state) {
            Ok((next, logits)) => {
                *state = next;
                ProbVector::softmax(&logits)
            }
            Err(_) => {
                tracing::warn!("non-finite activation while scoring");
                ProbVector::new(vec![f64::NAN; self.params.vocab_size()])
            }
        }
    }

    /// Log-likelihood of `ids` continuing from `state`, where `prev` is the
    /// token fed last. Updates `state`.
    pub fn score_from(&self, state: &mut LstmState, prev: TokenId, ids: &[TokenId]) -> f64 {
        let mut input = prev;
        let mut total = 0.0;
        for &x in ids {
            total += self.advance(state, input).log_prob(x);
            input = x;
        }
        total
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<(), LmError> {
        let v = self.config.vocab_size;
        match ids.iter().find(|id| id.index() >= v) {
            Some(id) => Err(LmError::IdOutOfRange(id.0, v)),
            None => Ok(()),
        }
    }
}

/// Next-token distributions for every position of `ids` from a zero state:
/// `probs[t]` is `p(x_t | x_<t)`, the first conditioned on `<EOS>` alone.
pub fn forward_sequence(
    model: &LstmModel,
    ids: &[TokenId],
) -> Result<(Vec<ProbVector>, ForwardCache), LmError> {
    let mut inputs = Vec::with_capacity(ids.len());
    if !ids.is_empty() {
        inputs.push(Reserved::Eos.id());
        inputs.extend_from_slice(&ids[..ids.len() - 1]);
    }
    model.check_ids(ids)?;
    forward_inputs(model, &inputs)
}

/// Teacher-forced pass over explicit `inputs` from a zero state, with no
/// implied leading `<EOS>`. `probs[t]` is the distribution after `inputs[..=t]`.
pub fn forward_inputs(
    model: &LstmModel,
    inputs: &[TokenId],
) -> Result<(Vec<ProbVector>, ForwardCache), LmError> {
    model.check_ids(inputs)?;
    let mut state = model.zero_state();
    let cache = cell::forward_window::<ChaCha8Rng>(
        &model.params,
        inputs,
        &mut state,
        model.reset_token(),
        None,
    )?;
    let probs = cache.probs().cloned().collect();
    Ok((probs, cache))
}

/// Mean of `-ln probs[t][targets[t]]`, in nats per token.
pub fn nll_loss(probs: &[ProbVector], targets: &[TokenId]) -> f64 {
    assert_eq!(probs.len(), targets.len(), "one target per distribution");
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs.iter().zip(targets).map(|(p, &t)| -p.log_prob(t)).sum();
    total / probs.len() as f64
}

/// Exact gradient of [`nll_loss`] over a [`forward_sequence`] or
/// [`forward_inputs`] cache.
pub fn backward(model: &LstmModel, cache: &ForwardCache, targets: &[TokenId]) -> LstmParams {
    let mut grads = model.params.zeros_like();
    if !cache.is_empty() {
        cell::backward_window(
            &model.params,
            cache,
            targets,
            1.0 / cache.len() as f64,
            &mut grads,
        );
    }
    grads
}

impl LanguageModel for LstmModel {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_token_dist(&self, prefix: &[TokenId]) -> ProbVector {
        let mut state = self.zero_state();
        let mut probs = self.advance(&mut state, Reserved::Eos.id());
        for &id in prefix {
            probs = self.advance(&mut state, id);
        }
        probs
    }

    fn score_sequence(&self, ids: &[TokenId]) -> f64 {
        let mut state = self.zero_state();
        self.score_from(&mut state, Reserved::Eos.id(), ids)
    }

    fn score_gap_fills(&self, left: &[TokenId], candidates: &[TokenId], right: &[TokenId]) -> Vec<f64> {
        let mut state = self.zero_state();
        let mut input = Reserved::Eos.id();
        let mut base = 0.0;
        for &x in left {
            base += self.advance(&mut state, input).log_prob(x);
            input = x;
        }
        let gap = self.advance(&mut state, input);
        candidates
            .iter()
            .map(|&c| {
                let mut s = state.clone();
                base + gap.log_prob(c) + self.score_from(&mut s, c, right)
            })
            .collect()
    }
}
