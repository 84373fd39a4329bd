//! Randomized masking smoothing.
//!
//! The smoothed ranker is `g(x) = E_{H ~ U(T,k)}[s(q, M(x, H))]`, estimated
//! by Monte Carlo over `n` masked copies or computed exactly by enumerating
//! all `C(T, k)` keep sets. The smoothed voting classifier aggregates
//! pairwise judgments of masked copies by majority.
//!
//! Masked copies are scored in parallel but reduced in draw order with
//! compensated summation, so a fixed seed gives bit-identical results for
//! any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{
    enumerate_keep_sets, keep_count, sample_keep_set, RngStream, Rounding, SubsetDistribution,
};
use crate::scorer::Scorer;
use crate::text::{mask_tokens, IndexSet, TokenSeq};

/// Default enumeration cap for exact smoothing.
pub const EXACT_CAP: u64 = 200_000;

/// Copies handed to one `score_batch` call.
const CHUNK: usize = 64;
/// Keep sets drawn ahead of scoring; bounds memory for large estimates.
const BLOCK: usize = 8192;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Equal vote counts produce no decision.
    #[default]
    Abstain,
    /// Ties, per copy and overall, resolve to class 0.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Fraction of positions masked in each copy.
    pub mask_ratio: f64,
    /// Copies used for prediction.
    pub n_predict: usize,
    /// Copies used for certification.
    pub n_certify: usize,
    pub seed: u64,
    pub tie_policy: TiePolicy,
    pub rounding: Rounding,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            mask_ratio: 0.3,
            n_predict: 100,
            n_certify: 1000,
            seed: 42,
            tie_policy: TiePolicy::Abstain,
            rounding: Rounding::HalfUp,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidParams(format!(
                "mask ratio must be in [0, 1), got {}",
                self.mask_ratio
            )));
        }
        if self.n_predict == 0 {
            return Err(Error::InvalidParams("n must be at least 1".into()));
        }
        if self.n_certify < self.n_predict {
            return Err(Error::InvalidParams(format!(
                "n' ({}) must be at least n ({})",
                self.n_certify, self.n_predict
            )));
        }
        Ok(())
    }

    pub fn keep_count(&self, len: usize) -> usize {
        keep_count(len, self.mask_ratio, self.rounding)
    }

    pub fn distribution(&self, len: usize) -> SubsetDistribution {
        SubsetDistribution {
            len,
            keep: self.keep_count(len),
        }
    }
}

/// Estimate (or exact value) of `g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedScore {
    pub mean: f64,
    pub samples: usize,
    /// Population standard deviation of the per-copy scores.
    pub std_dev: f64,
    /// True when every keep set was enumerated.
    pub exact: bool,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

impl SmoothedScore {
    pub(crate) fn from_scores(scores: Vec<f64>, exact: bool) -> Self {
        let (mean, std_dev) = mean_std(&scores);
        SmoothedScore {
            mean,
            samples: scores.len(),
            std_dev,
            exact,
            scores,
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean and population standard deviation, accumulated in slice order.
/// A constant sample returns that constant exactly.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return (first, 0.0);
    }
    let mut acc = KahanSum::default();
    values.iter().for_each(|v| acc.add(*v));
    let mean = (acc.total() / values.len() as f64).clamp(0.0, 1.0);
    let mut sq = KahanSum::default();
    values.iter().for_each(|v| sq.add((v - mean) * (v - mean)));
    (mean, (sq.total() / values.len() as f64).sqrt())
}

/// Scores `M(doc, H)` for every keep set, preserving input order.
pub fn score_masked(
    scorer: &dyn Scorer,
    query: &[String],
    doc: &[String],
    keeps: &[IndexSet],
) -> Result<Vec<f64>> {
    let parts: Vec<Result<Vec<f64>>> = keeps
        .par_chunks(CHUNK)
        .map(|chunk| {
            let copies: Vec<Vec<String>> = chunk.iter().map(|h| mask_tokens(doc, h)).collect();
            let scores = scorer.score_batch(query, &copies)?;
            if scores.len() != copies.len() {
                return Err(Error::InvalidParams(format!(
                    "scorer returned {} scores for {} documents",
                    scores.len(),
                    copies.len()
                )));
            }
            if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(Error::InvalidParams(format!("score {bad} outside [0, 1]")));
            }
            Ok(scores)
        })
        .collect();
    let mut out = Vec::with_capacity(keeps.len());
    for (i, part) in parts.into_iter().enumerate() {
        match part {
            Ok(scores) => out.extend(scores),
            Err(source) => {
                return Err(Error::ScoringFailed {
                    completed: i * CHUNK,
                    total: keeps.len(),
                    source: Box::new(source),
                })
            }
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of `g(x)` from `copies` keep sets drawn from `rng`.
pub fn smoothed_score_n(
    scorer: &dyn Scorer,
    query: &TokenSeq,
    doc: &TokenSeq,
    cfg: &SmoothingConfig,
    copies: usize,
    rng: &mut RngStream,
) -> Result<SmoothedScore> {
    if copies == 0 {
        return Err(Error::InvalidParams("need at least one masked copy".into()));
    }
    let dist = cfg.distribution(doc.len());
    let mut scores = Vec::with_capacity(copies);
    let mut remaining = copies;
    while remaining > 0 {
        let block = remaining.min(BLOCK);
        let keeps: Vec<IndexSet> = (0..block).map(|_| sample_keep_set(dist, rng)).collect();
        scores.extend(score_masked(scorer, query.tokens(), doc.tokens(), &keeps)?);
        remaining -= block;
    }
    Ok(SmoothedScore::from_scores(scores, false))
}

/// Prediction-time estimate of `g(x)` with `cfg.n_predict` copies.
pub fn smoothed_score(
    scorer: &dyn Scorer,
    query: &TokenSeq,
    doc: &TokenSeq,
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<SmoothedScore> {
    smoothed_score_n(scorer, query, doc, cfg, cfg.n_predict, rng)
}

/// `g(x)` by enumerating every keep set.
pub fn exact_smoothed_score(
    scorer: &dyn Scorer,
    query: &TokenSeq,
    doc: &TokenSeq,
    mask_ratio: f64,
    rounding: Rounding,
    cap: u64,
) -> Result<SmoothedScore> {
    let dist = SubsetDistribution {
        len: doc.len(),
        keep: keep_count(doc.len(), mask_ratio, rounding),
    };
    let keeps: Vec<IndexSet> = enumerate_keep_sets(dist, cap)?.collect();
    let scores = score_masked(scorer, query.tokens(), doc.tokens(), &keeps)?;
    Ok(SmoothedScore::from_scores(scores, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteDecision {
    Class0,
    Class1,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub counts: [u64; 2],
    /// Copies whose judgment was an exact tie; they split evenly and so
    /// never move the decision. Always 0 under the strict policy.
    pub ties: u64,
    pub decision: VoteDecision,
}

/// Majority vote of pairwise judgments over `cfg.n_predict` masked copies.
///
/// Equal-length documents share each copy's keep set; otherwise every
/// document gets its own draw at its own `(T, k)`.
pub fn smoothed_vote(
    scorer: &dyn Scorer,
    query: &TokenSeq,
    doc_i: &TokenSeq,
    doc_j: &TokenSeq,
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<VoteOutcome> {
    let dist_i = cfg.distribution(doc_i.len());
    let dist_j = cfg.distribution(doc_j.len());
    let shared = doc_i.len() == doc_j.len();
    let keeps: Vec<(IndexSet, IndexSet)> = (0..cfg.n_predict)
        .map(|_| {
            let a = sample_keep_set(dist_i, rng);
            let b = if shared { a.clone() } else { sample_keep_set(dist_j, rng) };
            (a, b)
        })
        .collect();
    let judgments: Vec<_> = keeps
        .par_iter()
        .map(|(a, b)| {
            scorer.judge_pair(
                query.tokens(),
                &mask_tokens(doc_i.tokens(), a),
                &mask_tokens(doc_j.tokens(), b),
            )
        })
        .collect::<Result<_>>()?;

    let mut counts = [0u64; 2];
    let mut ties = 0u64;
    for j in judgments {
        match (j.tie, cfg.tie_policy) {
            (true, TiePolicy::Abstain) => ties += 1,
            (true, TiePolicy::Strict) => counts[0] += 1,
            (false, _) => counts[usize::from(j.class)] += 1,
        }
    }
    let decision = match counts[0].cmp(&counts[1]) {
        std::cmp::Ordering::Greater => VoteDecision::Class0,
        std::cmp::Ordering::Less => VoteDecision::Class1,
        std::cmp::Ordering::Equal => match cfg.tie_policy {
            TiePolicy::Abstain => VoteDecision::Abstain,
            TiePolicy::Strict => VoteDecision::Class0,
        },
    };
    Ok(VoteOutcome {
        counts,
        ties,
        decision,
    })
}

/// Something that assigns a relevance score to a whole document.
pub trait Ranker: Sync {
    fn rank_score(&self, query: &TokenSeq, doc: &TokenSeq) -> Result<f64>;
    fn label(&self) -> String;
}

/// The base scorer applied to the unmasked document.
pub struct BaseRanker<'a> {
    pub scorer: &'a dyn Scorer,
}

impl Ranker for BaseRanker<'_> {
    fn rank_score(&self, query: &TokenSeq, doc: &TokenSeq) -> Result<f64> {
        self.scorer.score(query.tokens(), doc.tokens())
    }

    fn label(&self) -> String {
        "base".to_string()
    }
}

/// Monte Carlo smoothed ranker.
///
/// The stream is derived from `stream_label` and the document length only,
/// so equal-length documents see the same keep sets and the ranker is a
/// deterministic function of its input.
pub struct SmoothedRanker<'a> {
    pub scorer: &'a dyn Scorer,
    pub cfg: SmoothingConfig,
    pub copies: usize,
    pub stream_label: String,
}

impl Ranker for SmoothedRanker<'_> {
    fn rank_score(&self, query: &TokenSeq, doc: &TokenSeq) -> Result<f64> {
        let mut rng = RngStream::named(
            self.cfg.seed,
            &format!("{}.len{}", self.stream_label, doc.len()),
        );
        Ok(smoothed_score_n(self.scorer, query, doc, &self.cfg, self.copies, &mut rng)?.mean)
    }

    fn label(&self) -> String {
        "smoothed".to_string()
    }
}

/// The exact smoothed ranker, for documents small enough to enumerate.
pub struct ExactSmoothedRanker<'a> {
    pub scorer: &'a dyn Scorer,
    pub mask_ratio: f64,
    pub rounding: Rounding,
    pub cap: u64,
}

impl Ranker for ExactSmoothedRanker<'_> {
    fn rank_score(&self, query: &TokenSeq, doc: &TokenSeq) -> Result<f64> {
        Ok(exact_smoothed_score(self.scorer, query, doc, self.mask_ratio, self.rounding, self.cap)?.mean)
    }

    fn label(&self) -> String {
        "smoothed-exact".to_string()
    }
}

/// A query and its candidate documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub query: TokenSeq,
    pub docs: Vec<(String, TokenSeq)>,
}

/// Scores and sorts candidates by descending score, ties broken by id.
pub fn rank_documents(
    ranker: &dyn Ranker,
    query: &TokenSeq,
    docs: &[(String, TokenSeq)],
) -> Result<Vec<(String, f64)>> {
    let mut scored = docs
        .iter()
        .map(|(id, doc)| Ok((id.clone(), ranker.rank_score(query, doc)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}
