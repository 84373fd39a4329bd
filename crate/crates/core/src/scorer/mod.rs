//! Pluggable relevance judges.
//!
//! Every scorer answers two questions: a pointwise relevance score in
//! `[0, 1]` and a pairwise judgment over `Y = {0, 1}`, where class 1 means
//! the first document is the more relevant one. Two deterministic built-ins
//! live here; external scorers are reached through
//! [`crate::harness::bridge::BridgeScorer`].

mod lexical;
mod linear;

pub use lexical::LexicalScorer;
pub use linear::{
    train_pairwise, EpochLog, HashedLinearScorer, TrainConfig, TrainReport, Triplet, HASH_BUCKETS,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::bridge::BridgeScorer;

/// Stable name and version string recorded in every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerIdentity {
    pub name: String,
    pub version: String,
}

/// Class probabilities for an ordered document pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseJudgment {
    pub probs: [f64; 2],
    /// Argmax class; 0 on an exact tie.
    pub class: u8,
    pub tie: bool,
}

impl PairwiseJudgment {
    /// `softmax(logits)` over the two classes.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let gap = logits[1] - logits[0];
        let probs = [sigmoid(-gap), sigmoid(gap)];
        let tie = probs[0] == probs[1];
        PairwiseJudgment {
            probs,
            class: u8::from(!tie && probs[1] > probs[0]),
            tie,
        }
    }
}

pub trait Scorer: Send + Sync {
    fn identity(&self) -> ScorerIdentity;

    /// Pointwise relevance of `doc` to `query`, in `[0, 1]`. Either side may
    /// contain `[MASK]` tokens.
    fn score(&self, query: &[String], doc: &[String]) -> Result<f64>;

    fn score_batch(&self, query: &[String], docs: &[Vec<String>]) -> Result<Vec<f64>> {
        docs.iter().map(|d| self.score(query, d)).collect()
    }

    fn judge_pair(
        &self,
        query: &[String],
        doc_i: &[String],
        doc_j: &[String],
    ) -> Result<PairwiseJudgment>;
}

/// The scorers the engine can be configured with.
pub enum ScorerHandle {
    Lexical(LexicalScorer),
    HashedLinear(HashedLinearScorer),
    Bridge(BridgeScorer),
}

impl ScorerHandle {
    pub fn kind(&self) -> &'static str {
        match self {
            ScorerHandle::Lexical(_) => "builtin-lexical",
            ScorerHandle::HashedLinear(_) => "builtin-hashed-linear",
            ScorerHandle::Bridge(_) => "external-bridge",
        }
    }

    fn inner(&self) -> &dyn Scorer {
        match self {
            ScorerHandle::Lexical(s) => s,
            ScorerHandle::HashedLinear(s) => s,
            ScorerHandle::Bridge(s) => s,
        }
    }
}

impl Scorer for ScorerHandle {
    fn identity(&self) -> ScorerIdentity {
        self.inner().identity()
    }

    fn score(&self, query: &[String], doc: &[String]) -> Result<f64> {
        self.inner().score(query, doc)
    }

    fn score_batch(&self, query: &[String], docs: &[Vec<String>]) -> Result<Vec<f64>> {
        self.inner().score_batch(query, docs)
    }

    fn judge_pair(
        &self,
        query: &[String],
        doc_i: &[String],
        doc_j: &[String],
    ) -> Result<PairwiseJudgment> {
        self.inner().judge_pair(query, doc_i, doc_j)
    }
}

/// Loss and gradients of the pairwise objective
/// `L = -y · log softmax(s_i - s_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseLoss {
    pub loss: f64,
    pub grad_i: [f64; 2],
    pub grad_j: [f64; 2],
}

pub fn pairwise_loss(s_i: [f64; 2], s_j: [f64; 2], label: [f64; 2]) -> PairwiseLoss {
    let d = [s_i[0] - s_j[0], s_i[1] - s_j[1]];
    let max = d[0].max(d[1]);
    let log_norm = max + ((d[0] - max).exp() + (d[1] - max).exp()).ln();
    let log_p = [d[0] - log_norm, d[1] - log_norm];
    let loss = -(label[0] * log_p[0] + label[1] * log_p[1]);
    // dL/dd = softmax(d) - y for a one-hot y
    let g = [log_p[0].exp() - label[0], log_p[1].exp() - label[1]];
    PairwiseLoss {
        loss,
        grad_i: g,
        grad_j: [-g[0], -g[1]],
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
