use std::collections::HashMap;

use super::{PairwiseJudgment, Scorer, ScorerIdentity};
use crate::error::{Error, Result};
use crate::text::MASK_TOKEN;

/// Untrained overlap scorer.
///
/// `score = 2·overlap / (|q| + |x|)` where `overlap` is the multiset
/// intersection of the query tokens with the unmasked document tokens, and
/// `|x|` counts every document position, masked or not. Masking therefore
/// never raises a score. Pairwise logits are `[0, score]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    pub const NAME: &'static str = "builtin-lexical";
    pub const VERSION: &'static str = "1";

    pub fn overlap(query: &[String], doc: &[String]) -> usize {
        let mut budget: HashMap<&str, usize> = HashMap::new();
        for q in query {
            if q != MASK_TOKEN {
                *budget.entry(q.as_str()).or_default() += 1;
            }
        }
        let mut overlap = 0;
        for tok in doc {
            if let Some(left) = budget.get_mut(tok.as_str()) {
                if *left > 0 {
                    *left -= 1;
                    overlap += 1;
                }
            }
        }
        overlap
    }

    pub fn raw_score(query: &[String], doc: &[String]) -> f64 {
        let denom = query.len() + doc.len();
        if denom == 0 {
            return 0.0;
        }
        (2.0 * Self::overlap(query, doc) as f64 / denom as f64).clamp(0.0, 1.0)
    }
}

impl Scorer for LexicalScorer {
    fn identity(&self) -> ScorerIdentity {
        ScorerIdentity {
            name: Self::NAME.to_string(),
            version: Self::VERSION.to_string(),
        }
    }

    fn score(&self, query: &[String], doc: &[String]) -> Result<f64> {
        if query.is_empty() || doc.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(Self::raw_score(query, doc))
    }

    fn judge_pair(
        &self,
        query: &[String],
        doc_i: &[String],
        doc_j: &[String],
    ) -> Result<PairwiseJudgment> {
        let s_i = self.score(query, doc_i)?;
        let s_j = self.score(query, doc_j)?;
        Ok(PairwiseJudgment::from_logits([0.0, s_i - s_j]))
    }
}
