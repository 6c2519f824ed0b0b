//! What the completion and evaluation code needs from a language model.

use std::ops::Deref;

use crate::tokenizer::TokenId;

/// A next-token distribution over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps already-normalized probabilities.
    pub fn new(probs: Vec<f64>) -> Self {
        ProbVector(probs)
    }

    /// Numerically stable softmax (max-subtracted).
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        ProbVector(probs)
    }

    pub fn uniform(size: usize) -> Self {
        ProbVector(vec![1.0 / size as f64; size])
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.0[id.index()]
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        self.0[id.index()].ln()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// An autoregressive model over token ids.
///
/// Every sequence is implicitly preceded by the `<EOS>` context, so an empty
/// prefix asks for the line-initial distribution.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    fn next_token_dist(&self, prefix: &[TokenId]) -> ProbVector;

    /// Total log-likelihood in nats, `sum_t log p(x_t | x_<t)`.
    fn score_sequence(&self, ids: &[TokenId]) -> f64;

    /// Scores `left ++ [c] ++ right` for every candidate `c`. Implementations
    /// may share work across candidates.
    fn score_gap_fills(&self, left: &[TokenId], candidates: &[TokenId], right: &[TokenId]) -> Vec<f64> {
        let mut seq = Vec::with_capacity(left.len() + 1 + right.len());
        candidates
            .iter()
            .map(|&c| {
                seq.clear();
                seq.extend_from_slice(left);
                seq.push(c);
                seq.extend_from_slice(right);
                self.score_sequence(&seq)
            })
            .collect()
    }
}

/// Perplexity from a mean negative log-likelihood in nats.
pub fn perplexity(mean_nll_nats: f64) -> f64 {
    mean_nll_nats.exp()
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// The same perplexity computed as `2^(loss in bits)`.
pub fn perplexity_base2(mean_nll_nats: f64) -> f64 {
    nats_to_bits(mean_nll_nats).exp2()
}

/// Mean NLL (nats per token) of a set of sequences, each scored independently.
pub fn mean_nll<M: LanguageModel + ?Sized>(model: &M, seqs: &[impl AsRef<[TokenId]>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in seqs {
        let s = s.as_ref();
        if s.is_empty() {
            continue;
        }
        total -= model.score_sequence(s);
        count += s.len();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
