//! Ranked completion candidates.

use std::cmp::Ordering;

use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub token_id: TokenId,
    pub log_score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Completions ordered by descending score, ties broken by ascending id.
/// Never contains `<BRK>`, `<UNK>`, `<EOS>`, `<i>` or `</i>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedCandidates {
    pub entries: Vec<Candidate>,
}

impl RankedCandidates {
    /// Ranks `(id, score)` pairs, dropping non-candidate ids and keeping the
    /// best `k`.
    pub fn from_scores(scores: impl IntoIterator<Item = (TokenId, f64)>, k: usize) -> Self {
        let mut scored: Vec<(TokenId, f64)> = scores
            .into_iter()
            .filter(|(id, _)| id.is_candidate())
            .collect();
        scored.sort_by(|a, b| compare_scored(*a, *b));
        scored.truncate(k);
        RankedCandidates {
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (token_id, log_score))| Candidate {
                    token_id,
                    log_score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<TokenId> {
        self.entries.iter().map(|c| c.token_id).collect()
    }

    /// Rank of `id`, or `None` when it was not ranked.
    pub fn rank_of(&self, id: TokenId) -> Option<usize> {
        self.entries.iter().find(|c| c.token_id == id).map(|c| c.rank)
    }
}

/// Descending score, then ascending id. NaN sorts last.
pub(crate) fn compare_scored(a: (TokenId, f64), b: (TokenId, f64)) -> Ordering {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    key(b.1).total_cmp(&key(a.1)).then_with(|| a.0.cmp(&b.0))
}

/// Ids `0..vocab_size` that may appear as completions.
pub fn eligible_ids(vocab_size: usize) -> impl Iterator<Item = TokenId> {
    (0..vocab_size as u32).map(TokenId).filter(|id| id.is_candidate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Reserved;

    #[test]
    fn ordering_and_ties() {
        let r = RankedCandidates::from_scores(
            vec![
                (TokenId(14), -1.0),
                (TokenId(12), -0.5),
                (TokenId(13), -1.0),
                (Reserved::Eos.id(), 0.0),
                (Reserved::Name.id(), -3.0),
            ],
            10,
        );
        assert_eq!(
            r.ids(),
            vec![TokenId(12), TokenId(13), TokenId(14), Reserved::Name.id()]
        );
        assert_eq!(r.entries.iter().map(|c| c.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert_eq!(r.rank_of(TokenId(14)), Some(3));
        assert_eq!(r.rank_of(Reserved::Eos.id()), None);
    }

    #[test]
    fn truncation() {
        let r = RankedCandidates::from_scores((11..20).map(|i| (TokenId(i), -(i as f64))), 3);
        assert_eq!(r.len(), 3);
        assert_eq!(eligible_ids(13).count(), 8);
    }
}
