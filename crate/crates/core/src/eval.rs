//! Completion ranking and the evaluation harness: perplexity, masked-word
//! MRR/hit@k, and multiple-choice questions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::lm::LstmModel;
use crate::model::{mean_nll, nats_to_bits, perplexity, perplexity_base2, LanguageModel};
use crate::ngram::{CompletionMode, NGramModel};
use crate::ranking::{eligible_ids, RankedCandidates};
use crate::tokenizer::{Reserved, Token, TokenId, Vocabulary};

pub const DEFAULT_POOL_SIZE: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("no test line is long enough and free of breaks")]
    NoEligibleSentences,
    #[error("mask index {mask_index} must be between 1 and the minimum length {min_len}")]
    InvalidMaskIndex { mask_index: usize, min_len: usize },
    #[error("question file line {line}: {reason}")]
    McqFormat { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionQuery {
    pub left: Vec<TokenId>,
    pub right: Vec<TokenId>,
    pub mode: CompletionMode,
    /// Candidates taken from the left-context ranking before rescoring.
    pub pool_size: usize,
    pub k: usize,
}

impl CompletionQuery {
    pub fn new(left: Vec<TokenId>, right: Vec<TokenId>, mode: CompletionMode, k: usize) -> Self {
        CompletionQuery {
            left,
            right,
            mode,
            pool_size: DEFAULT_POOL_SIZE.max(k),
            k,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k == 0 {
            return Err(EvalError::InvalidQuery("k must be at least 1".into()));
        }
        if self.mode == CompletionMode::Full && self.pool_size < self.k {
            return Err(EvalError::InvalidQuery("pool_size must be at least k".into()));
        }
        Ok(())
    }
}

/// Eligible tokens ranked by `p(w | left)`.
pub fn rank_start<M: LanguageModel + ?Sized>(lm: &M, left: &[TokenId], k: usize) -> RankedCandidates {
    let dist = lm.next_token_dist(left);
    RankedCandidates::from_scores(eligible_ids(lm.vocab_size()).map(|w| (w, dist.log_prob(w))), k)
}

/// The top `pool_size` tokens of [`rank_start`], re-ranked by the
/// log-likelihood of `left ++ [w] ++ right`.
pub fn rank_full<M: LanguageModel + ?Sized>(
    lm: &M,
    left: &[TokenId],
    right: &[TokenId],
    pool_size: usize,
    k: usize,
) -> RankedCandidates {
    let pool = rank_start(lm, left, pool_size).ids();
    let scores = lm.score_gap_fills(left, &pool, right);
    RankedCandidates::from_scores(pool.into_iter().zip(scores), k)
}

pub fn rank_query<M: LanguageModel + ?Sized>(lm: &M, query: &CompletionQuery) -> RankedCandidates {
    match query.mode {
        CompletionMode::Start => rank_start(lm, &query.left, query.k),
        CompletionMode::Full => rank_full(lm, &query.left, &query.right, query.pool_size, query.k),
    }
}

/// Anything that can answer a [`CompletionQuery`].
pub trait Completer {
    fn vocab_size(&self) -> usize;
    fn complete(&self, query: &CompletionQuery) -> RankedCandidates;
}

impl Completer for LstmModel {
    fn vocab_size(&self) -> usize {
        LanguageModel::vocab_size(self)
    }

    fn complete(&self, query: &CompletionQuery) -> RankedCandidates {
        rank_query(self, query)
    }
}

/// The n-gram model answers with its own window-based completion in both
/// modes; `pool_size` does not apply.
impl Completer for NGramModel {
    fn vocab_size(&self) -> usize {
        LanguageModel::vocab_size(self)
    }

    fn complete(&self, query: &CompletionQuery) -> RankedCandidates {
        NGramModel::complete(self, &query.left, &query.right, query.mode, query.k)
    }
}

/// Routes queries through [`rank_start`] / [`rank_full`] for any model.
pub struct Rescoring<'a, M: ?Sized>(pub &'a M);

impl<M: LanguageModel + ?Sized> Completer for Rescoring<'_, M> {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn complete(&self, query: &CompletionQuery) -> RankedCandidates {
        rank_query(self.0, query)
    }
}

/// Mean of `1/rank`, absent ranks counting 0.
pub fn mrr(ranks: &[Option<usize>]) -> f64 {
    if ranks.is_empty() {
        tracing::warn!("MRR of an empty rank list");
        return 0.0;
    }
    ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / ranks.len() as f64
}

/// Fraction of ranks `<= k`; absent ranks are misses.
pub fn hit_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        tracing::warn!("hit@{k} of an empty rank list");
        return 0.0;
    }
    ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / ranks.len() as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub n_items: usize,
    pub mrr: Option<f64>,
    pub hit_at: BTreeMap<usize, f64>,
    /// Nats per token.
    pub mean_nll: Option<f64>,
    /// `e^mean_nll`.
    pub perplexity: Option<f64>,
    /// `2^bits`, equal to `perplexity` up to rounding.
    pub perplexity_2: Option<f64>,
    pub accuracy: Option<f64>,
    /// Wrong MCQ predictions keyed by the chosen distractor's label.
    pub errors_by_label: BTreeMap<String, usize>,
}

impl EvalReport {
    fn fields(&self) -> Vec<(String, String)> {
        let mut out = vec![("n_items".to_string(), self.n_items.to_string())];
        let mut opt = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push((k.to_string(), format!("{v:.6}")));
            }
        };
        opt("mean_nll", self.mean_nll);
        opt("mean_nll_bits", self.mean_nll.map(nats_to_bits));
        opt("perplexity_e", self.perplexity);
        opt("perplexity_2", self.perplexity_2);
        opt("mrr", self.mrr);
        opt("accuracy", self.accuracy);
        for (k, v) in &self.hit_at {
            out.push((format!("hit@{k}"), format!("{v:.6}")));
        }
        for (label, n) in &self.errors_by_label {
            out.push((format!("errors_{label}"), n.to_string()));
        }
        out
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        self.fields().iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}: {v}");
            s
        })
    }

    /// A tab-separated header row and value row.
    pub fn to_tsv(&self) -> String {
        let f = self.fields();
        let header: Vec<&str> = f.iter().map(|(k, _)| k.as_str()).collect();
        let values: Vec<&str> = f.iter().map(|(_, v)| v.as_str()).collect();
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }
}

/// Mean per-token NLL over whole lines, each scored from the `<EOS>` context.
pub fn eval_perplexity<M: LanguageModel + ?Sized>(lm: &M, lines: &[impl AsRef<[TokenId]>]) -> EvalReport {
    let nll = mean_nll(lm, lines);
    EvalReport {
        n_items: lines.iter().filter(|l| !l.as_ref().is_empty()).count(),
        mean_nll: Some(nll),
        perplexity: Some(perplexity(nll)),
        perplexity_2: Some(perplexity_base2(nll)),
        ..EvalReport::default()
    }
}

fn is_marker(id: TokenId) -> bool {
    [Reserved::ItalicOpen, Reserved::ItalicClose, Reserved::Eos]
        .iter()
        .any(|r| r.id() == id)
}

/// Positions of the word tokens in `line`, skipping italic markers and `<EOS>`.
pub fn word_positions(line: &[TokenId]) -> Vec<usize> {
    (0..line.len()).filter(|&i| !is_marker(line[i])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedEval {
    /// 1-based word index to hide.
    pub mask_index: usize,
    /// Minimum number of words for a line to qualify.
    pub min_len: usize,
    pub mode: CompletionMode,
    pub pool_size: usize,
}

impl Default for MaskedEval {
    fn default() -> Self {
        MaskedEval {
            mask_index: 5,
            min_len: 10,
            mode: CompletionMode::Start,
            pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

/// One masked gap: contexts around the hidden word and the word itself.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedItem {
    pub left: Vec<TokenId>,
    pub right: Vec<TokenId>,
    pub target: TokenId,
}

/// Lines with at least `min_len` words and no `<BRK>`, each with its
/// `mask_index`-th word removed.
pub fn masked_items(
    lines: &[impl AsRef<[TokenId]>],
    mask_index: usize,
    min_len: usize,
) -> Result<Vec<MaskedItem>, EvalError> {
    if mask_index == 0 || mask_index > min_len {
        return Err(EvalError::InvalidMaskIndex { mask_index, min_len });
    }
    let brk = Reserved::Break.id();
    let items: Vec<MaskedItem> = lines
        .iter()
        .map(AsRef::as_ref)
        .filter(|l| !l.contains(&brk))
        .filter_map(|l| {
            let words = word_positions(l);
            (words.len() >= min_len).then(|| {
                let at = words[mask_index - 1];
                MaskedItem {
                    left: l[..at].to_vec(),
                    right: l[at + 1..].to_vec(),
                    target: l[at],
                }
            })
        })
        .collect();
    if items.is_empty() {
        return Err(EvalError::NoEligibleSentences);
    }
    Ok(items)
}

/// Rank of each item's true word; `None` when it falls outside the ranking
/// or is not an eligible candidate at all.
pub fn masked_ranks<C: Completer + ?Sized>(completer: &C, items: &[MaskedItem], settings: &MaskedEval) -> Vec<Option<usize>> {
    let k = match settings.mode {
        CompletionMode::Start => completer.vocab_size(),
        CompletionMode::Full => settings.pool_size,
    };
    items
        .iter()
        .map(|item| {
            let query = CompletionQuery {
                left: item.left.clone(),
                right: item.right.clone(),
                mode: settings.mode,
                pool_size: settings.pool_size,
                k,
            };
            completer.complete(&query).rank_of(item.target)
        })
        .collect()
}

pub const REPORTED_HITS: [usize; 3] = [1, 5, 10];

pub fn rank_report(ranks: &[Option<usize>]) -> EvalReport {
    EvalReport {
        n_items: ranks.len(),
        mrr: Some(mrr(ranks)),
        hit_at: REPORTED_HITS.iter().map(|&k| (k, hit_at_k(ranks, k))).collect(),
        ..EvalReport::default()
    }
}

pub fn eval_masked<C: Completer + ?Sized>(
    completer: &C,
    lines: &[impl AsRef<[TokenId]>],
    settings: &MaskedEval,
) -> Result<EvalReport, EvalError> {
    let items = masked_items(lines, settings.mask_index, settings.min_len)?;
    Ok(rank_report(&masked_ranks(completer, &items, settings)))
}

// Multiple choice.

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DistractorLabel {
    Semantic,
    Syntactic,
    Both,
}

impl DistractorLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DistractorLabel::Semantic => "semantic",
            DistractorLabel::Syntactic => "syntactic",
            DistractorLabel::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "semantic" => Some(DistractorLabel::Semantic),
            "syntactic" => Some(DistractorLabel::Syntactic),
            "both" => Some(DistractorLabel::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McqQuestion {
    pub left: Vec<TokenId>,
    pub right: Vec<TokenId>,
    pub choices: [Vec<TokenId>; 4],
    pub correct_index: usize,
    /// Labels of the wrong choices, in choice order.
    pub distractor_labels: [DistractorLabel; 3],
}

impl McqQuestion {
    /// Label of choice `i`, or `None` for the correct one.
    pub fn label_of(&self, i: usize) -> Option<DistractorLabel> {
        match i.cmp(&self.correct_index) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => Some(self.distractor_labels[i]),
            std::cmp::Ordering::Greater => Some(self.distractor_labels[i - 1]),
        }
    }
}

fn encode_field(vocab: &Vocabulary, field: &str) -> Vec<TokenId> {
    let unk = Reserved::Unknown.id();
    field
        .split_whitespace()
        .map(|t| vocab.id_of(&Token::new(t)).unwrap_or(unk))
        .collect()
}

/// Parses the tab-separated question format: left, right, four choices,
/// correct index (0-3), three distractor labels. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_mcq(text: &str, vocab: &Vocabulary) -> Result<Vec<McqQuestion>, EvalError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let err = |reason: String| EvalError::McqFormat { line, reason };
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 tab-separated fields, found {}", f.len())));
        }
        let choices: [Vec<TokenId>; 4] = std::array::from_fn(|i| encode_field(vocab, f[2 + i]));
        if choices.iter().any(Vec::is_empty) {
            return Err(err("empty choice".into()));
        }
        let correct_index: usize = f[6]
            .trim()
            .parse()
            .ok()
            .filter(|&i| i < 4)
            .ok_or_else(|| err(format!("bad correct index `{}`", f[6])))?;
        let mut labels = [DistractorLabel::Both; 3];
        for (slot, s) in labels.iter_mut().zip(&f[7..]) {
            *slot = DistractorLabel::parse(s.trim()).ok_or_else(|| err(format!("unknown label `{s}`")))?;
        }
        let mut sorted = labels;
        sorted.sort();
        if sorted != [DistractorLabel::Semantic, DistractorLabel::Syntactic, DistractorLabel::Both] {
            return Err(err("labels must cover semantic, syntactic and both".into()));
        }
        out.push(McqQuestion {
            left: encode_field(vocab, f[0]),
            right: encode_field(vocab, f[1]),
            choices,
            correct_index,
            distractor_labels: labels,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum McqScoring {
    /// Total log-likelihood of the filled sentence.
    #[default]
    Total,
    /// Log-likelihood divided by the filled sentence's length.
    PerToken,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McqOutcome {
    pub scores: [f64; 4],
    /// Choice indices, best first; ties keep the lower index first.
    pub ranking: [usize; 4],
    pub predicted: usize,
    pub correct: bool,
    pub tie: bool,
}

pub fn eval_mcq<M: LanguageModel + ?Sized>(
    lm: &M,
    questions: &[McqQuestion],
    scoring: McqScoring,
) -> (EvalReport, Vec<McqOutcome>) {
    let mut outcomes = Vec::with_capacity(questions.len());
    let mut errors_by_label = BTreeMap::new();
    for (qi, q) in questions.iter().enumerate() {
        let scores: [f64; 4] = std::array::from_fn(|i| {
            let mut seq = q.left.clone();
            seq.extend(&q.choices[i]);
            seq.extend(&q.right);
            let lp = lm.score_sequence(&seq);
            match scoring {
                McqScoring::Total => lp,
                McqScoring::PerToken => lp / seq.len() as f64,
            }
        });
        let mut ranking = [0, 1, 2, 3];
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let predicted = ranking[0];
        let tie = scores[ranking[1]] == scores[predicted];
        if tie {
            tracing::info!(question = qi, predicted, "tied top score; lower index chosen");
        }
        let correct = predicted == q.correct_index;
        if let Some(label) = q.label_of(predicted) {
            *errors_by_label.entry(label.as_str().to_string()).or_insert(0) += 1;
        }
        outcomes.push(McqOutcome {
            scores,
            ranking,
            predicted,
            correct,
            tie,
        });
    }
    let n = questions.len();
    let right = outcomes.iter().filter(|o| o.correct).count();
    let report = EvalReport {
        n_items: n,
        accuracy: Some(if n == 0 { 0.0 } else { right as f64 / n as f64 }),
        errors_by_label,
        ..EvalReport::default()
    };
    (report, outcomes)
}
