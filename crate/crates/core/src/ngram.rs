//! Count-based n-gram model, the baseline the LSTM is compared against.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{LanguageModel, ProbVector};
use crate::ranking::{eligible_ids, RankedCandidates};
use crate::tokenizer::{EncodedSequence, Reserved, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum NGramError {
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("training data is empty")]
    EmptyTraining,
    #[error("token id {0} is outside a vocabulary of {1}")]
    IdOutOfRange(u32, usize),
    #[error("smoothing alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    /// `(c(ctx,w) + a) / (c(ctx) + aV)`
    AddAlpha,
    /// Dirichlet prior centred on the add-alpha unigram:
    /// `(c(ctx,w) + aV p_uni(w)) / (c(ctx) + aV)`
    UnigramBackoff,
}

impl Smoothing {
    pub fn as_str(self) -> &'static str {
        match self {
            Smoothing::AddAlpha => "add-alpha",
            Smoothing::UnigramBackoff => "unigram-backoff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "add-alpha" => Some(Smoothing::AddAlpha),
            "unigram-backoff" => Some(Smoothing::UnigramBackoff),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompletionMode {
    /// Left context only.
    Start,
    /// Left and right context.
    Full,
}

type Successors = BTreeMap<TokenId, u64>;

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab_size: usize,
    alpha: f64,
    smoothing: Smoothing,
    counts: BTreeMap<Vec<TokenId>, Successors>,
    context_totals: BTreeMap<Vec<TokenId>, u64>,
    unigram: Vec<u64>,
    unigram_total: u64,
}

/// Counts every length-`order` window. Each line gets `order - 1` leading
/// `<EOS>` ids as context.
pub fn fit_ngram(
    train: &[EncodedSequence],
    order: usize,
    alpha: f64,
    vocab_size: usize,
) -> Result<NGramModel, NGramError> {
    fit_ngram_with(train, order, alpha, Smoothing::AddAlpha, vocab_size)
}

pub fn fit_ngram_with(
    train: &[EncodedSequence],
    order: usize,
    alpha: f64,
    smoothing: Smoothing,
    vocab_size: usize,
) -> Result<NGramModel, NGramError> {
    if order < 1 {
        return Err(NGramError::InvalidOrder(order));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(NGramError::InvalidAlpha(alpha));
    }
    if train.iter().all(|s| s.is_empty()) {
        return Err(NGramError::EmptyTraining);
    }
    let mut counts: BTreeMap<Vec<TokenId>, Successors> = BTreeMap::new();
    let pad = Reserved::Eos.id();
    for seq in train {
        let mut padded = vec![pad; order - 1];
        padded.extend_from_slice(seq);
        for window in padded.windows(order) {
            let (ctx, target) = window.split_at(order - 1);
            if target[0].index() >= vocab_size {
                return Err(NGramError::IdOutOfRange(target[0].0, vocab_size));
            }
            *counts
                .entry(ctx.to_vec())
                .or_default()
                .entry(target[0])
                .or_default() += 1;
        }
    }
    Ok(NGramModel::from_counts(order, vocab_size, alpha, smoothing, counts))
}

impl NGramModel {
    fn from_counts(
        order: usize,
        vocab_size: usize,
        alpha: f64,
        smoothing: Smoothing,
        counts: BTreeMap<Vec<TokenId>, Successors>,
    ) -> Self {
        let mut unigram = vec![0u64; vocab_size];
        let mut context_totals = BTreeMap::new();
        for (ctx, succ) in &counts {
            let mut total = 0;
            for (id, &c) in succ {
                unigram[id.index()] += c;
                total += c;
            }
            context_totals.insert(ctx.clone(), total);
        }
        let unigram_total = unigram.iter().sum();
        NGramModel {
            order,
            vocab_size,
            alpha,
            smoothing,
            counts,
            context_totals,
            unigram,
            unigram_total,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|s| s.get(&next))
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>> {
        &self.counts
    }

    /// The last `order - 1` ids of `<EOS>`-padded history.
    fn context_of(&self, history: &[TokenId]) -> Vec<TokenId> {
        let need = self.order - 1;
        let mut ctx = Vec::with_capacity(need);
        let take = history.len().min(need);
        ctx.resize(need - take, Reserved::Eos.id());
        ctx.extend_from_slice(&history[history.len() - take..]);
        ctx
    }

    fn unigram_prob(&self, next: TokenId) -> f64 {
        let v = self.vocab_size as f64;
        if self.unigram_total == 0 && self.alpha == 0.0 {
            return 1.0 / v;
        }
        (self.unigram[next.index()] as f64 + self.alpha) / (self.unigram_total as f64 + self.alpha * v)
    }

    /// `p(next | context)` where `context` is already the model context.
    fn prob_in_context(&self, context: &[TokenId], next: TokenId) -> f64 {
        let total = self.context_totals.get(context).copied().unwrap_or(0);
        let c = self.count(context, next) as f64;
        let v = self.vocab_size as f64;
        let a = self.alpha;
        match self.smoothing {
            _ if total == 0 && a == 0.0 => self.unigram_prob(next),
            Smoothing::AddAlpha => (c + a) / (total as f64 + a * v),
            Smoothing::UnigramBackoff => {
                (c + a * v * self.unigram_prob(next)) / (total as f64 + a * v)
            }
        }
    }

    pub fn prob(&self, history: &[TokenId], next: TokenId) -> f64 {
        self.prob_in_context(&self.context_of(history), next)
    }

    pub fn next_dist(&self, history: &[TokenId]) -> ProbVector {
        let ctx = self.context_of(history);
        ProbVector::new(
            (0..self.vocab_size as u32)
                .map(|i| self.prob_in_context(&ctx, TokenId(i)))
                .collect(),
        )
    }

    /// `sum_t log p(x_t | x_{t-n+1..t-1})` in nats; `-inf` when some
    /// transition has zero probability.
    pub fn sequence_loglik(&self, seq: &[TokenId]) -> f64 {
        (0..seq.len())
            .map(|t| self.prob(&seq[..t], seq[t]).ln())
            .sum()
    }

    /// Ranks gap fillers. `Start` scores `log p(w | left)`; `Full` adds the log
    /// probability of every right-context token whose window covers the gap.
    pub fn complete(
        &self,
        left: &[TokenId],
        right: &[TokenId],
        mode: CompletionMode,
        k: usize,
    ) -> RankedCandidates {
        let ctx = self.context_of(left);
        let reach = match mode {
            CompletionMode::Start => 0,
            CompletionMode::Full => right.len().min(self.order - 1),
        };
        let mut history: Vec<TokenId> = left.to_vec();
        let scores = eligible_ids(self.vocab_size).map(|w| {
            let mut score = self.prob_in_context(&ctx, w).ln();
            history.truncate(left.len());
            history.push(w);
            for &next in &right[..reach] {
                score += self.prob(&history, next).ln();
                history.push(next);
            }
            (w, score)
        });
        let scores: Vec<(TokenId, f64)> = scores.collect();
        RankedCandidates::from_scores(scores, k)
    }

    /// Text model file: `AKNG1`, order, vocabulary size, alpha and smoothing
    /// on their own lines, then one `ctx ids<TAB>id:count ...` record per context.
    pub fn to_file_string(&self) -> String {
        let mut s = format!(
            "AKNG1\n{}\n{}\n{}\n{}\n",
            self.order,
            self.vocab_size,
            self.alpha,
            self.smoothing.as_str()
        );
        for (ctx, succ) in &self.counts {
            let ctx: Vec<String> = ctx.iter().map(|id| id.to_string()).collect();
            s.push_str(&ctx.join(" "));
            s.push('\t');
            let mut first = true;
            for (id, c) in succ {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{id}:{c}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self, NGramError> {
        let bad = |m: &str| NGramError::Format(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("AKNG1") {
            return Err(bad("missing AKNG1 header"));
        }
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(&format!("missing {what}")));
        let order: usize = next("order")?.parse().map_err(|_| bad("order"))?;
        let vocab_size: usize = next("vocab size")?.parse().map_err(|_| bad("vocab size"))?;
        let alpha: f64 = next("alpha")?.parse().map_err(|_| bad("alpha"))?;
        let smoothing = Smoothing::parse(next("smoothing")?).ok_or_else(|| bad("smoothing"))?;
        if order < 1 {
            return Err(NGramError::InvalidOrder(order));
        }
        let parse_id = |s: &str| -> Result<TokenId, NGramError> {
            let id: u32 = s.parse().map_err(|_| bad(&format!("id `{s}`")))?;
            if id as usize >= vocab_size {
                return Err(NGramError::IdOutOfRange(id, vocab_size));
            }
            Ok(TokenId(id))
        };
        let mut counts = BTreeMap::new();
        for line in lines {
            let (ctx, succ) = line.split_once('\t').ok_or_else(|| bad("record without tab"))?;
            let ctx: Vec<TokenId> = ctx
                .split_whitespace()
                .map(parse_id)
                .collect::<Result<_, _>>()?;
            if ctx.len() != order - 1 {
                return Err(bad("context length does not match order"));
            }
            let mut map = Successors::new();
            for pair in succ.split_whitespace() {
                let (id, c) = pair.split_once(':').ok_or_else(|| bad("pair"))?;
                let c: u64 = c.parse().map_err(|_| bad("count"))?;
                map.insert(parse_id(id)?, c);
            }
            counts.insert(ctx, map);
        }
        Ok(NGramModel::from_counts(order, vocab_size, alpha, smoothing, counts))
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_dist(&self, prefix: &[TokenId]) -> ProbVector {
        self.next_dist(prefix)
    }

    fn score_sequence(&self, ids: &[TokenId]) -> f64 {
        self.sequence_loglik(ids)
    }
}
