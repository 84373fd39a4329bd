//! Certified top-K robustness for the smoothed ranker.
//!
//! For a perturbation touching at most `R` of `T` positions, the smoothed
//! score can rise by at most a bound built from three terms:
//!
//! * `alpha = 1 / C(T, k)`
//! * `beta`, the mean masked-copy score over keep sets that intersect the
//!   perturbed positions (estimated by Monte Carlo)
//! * `delta = 1 - C(T-R, k) / C(T, k)`, the chance a keep set intersects them
//!
//! A query is certified at radius `R` when `g(x_K) - g(x_{K+1}) - bound >= 0`.
//! Three bounds are offered: `alpha·beta·delta` ([`BoundVariant::Paper`]),
//! `beta·delta` ([`BoundVariant::Conservative`], the default) and `delta`
//! ([`BoundVariant::BetaOne`]). Only the last is a worst case over scores in
//! `[0, 1]`; the others are checked empirically against brute force.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::js_divergence;
use crate::sampling::{
    binom_f64, binom_ratio, binom_ratio_exact, binom_u128, keep_count, sample_keep_set,
    sample_permutation, RngStream, Rounding, SubsetDistribution, EXACT_MAX_LEN,
};
use crate::scorer::Scorer;
use crate::smoothing::{mean_std, score_masked, smoothed_score_n, CandidateSet, SmoothingConfig};
use crate::text::{IndexSet, TokenSeq};

const BLOCK: usize = 8192;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// `alpha · beta · delta`
    Paper,
    /// `beta · delta`
    #[default]
    Conservative,
    /// `delta`
    BetaOne,
}

impl BoundVariant {
    pub const ALL: [BoundVariant; 3] = [
        BoundVariant::Paper,
        BoundVariant::Conservative,
        BoundVariant::BetaOne,
    ];

    pub fn needs_beta(self) -> bool {
        self != BoundVariant::BetaOne
    }
}

impl fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundVariant::Paper => "paper",
            BoundVariant::Conservative => "conservative",
            BoundVariant::BetaOne => "beta-one",
        })
    }
}

impl FromStr for BoundVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(BoundVariant::Paper),
            "conservative" => Ok(BoundVariant::Conservative),
            "beta-one" => Ok(BoundVariant::BetaOne),
            other => Err(Error::InvalidParams(format!("unknown bound variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// `R = 0, 1, 2, ...` until the condition first fails.
    #[default]
    Linear,
    /// Bisection on `R`; only valid for the beta-one bound, which is
    /// monotone in `R`.
    Binary,
}

/// `1 / C(T, k)`
pub fn alpha(len: usize, keep: usize) -> f64 {
    1.0 / binom_f64(len, keep)
}

pub fn alpha_exact(len: usize, keep: usize) -> Result<Ratio<u128>> {
    if len > EXACT_MAX_LEN || keep > len {
        return Err(Error::InvalidParams(format!("alpha_exact({len}, {keep})")));
    }
    Ok(Ratio::new(1, binom_u128(len, keep).expect("T <= 64 fits u128")))
}

/// `1 - C(T-R, k) / C(T, k)`
pub fn delta(len: usize, keep: usize, radius: usize) -> f64 {
    1.0 - binom_ratio(len, keep, radius)
}

pub fn delta_exact(len: usize, keep: usize, radius: usize) -> Result<Ratio<u128>> {
    Ok(Ratio::from_integer(1) - binom_ratio_exact(len, keep, radius)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub variant: BoundVariant,
}

impl BoundTerms {
    pub fn new(len: usize, keep: usize, radius: usize, beta: f64, variant: BoundVariant) -> Self {
        BoundTerms {
            alpha: alpha(len, keep),
            beta: beta.clamp(0.0, 1.0),
            delta: delta(len, keep, radius),
            variant,
        }
    }

    pub fn bound(&self) -> f64 {
        match self.variant {
            BoundVariant::Paper => self.alpha * self.beta * self.delta,
            BoundVariant::Conservative => self.beta * self.delta,
            BoundVariant::BetaOne => self.delta,
        }
    }
}

/// Result of the intersection-filtered Monte Carlo estimate of `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: f64,
    /// Masked copies that survived the intersection filter.
    pub retained: usize,
    pub drawn: usize,
    /// Set when nothing survived and `beta` fell back to 1.
    pub fallback: bool,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Estimates `beta` for a document: draw `n_r` hypothetical perturbation
/// sets `a ~ U(T, r)`, for each draw `n_k` keep sets `b ~ U(T, k)`, drop
/// every `b` that misses `a`, and average the scores of the surviving
/// masked copies.
#[allow(clippy::too_many_arguments)]
pub fn estimate_beta(
    scorer: &dyn Scorer,
    query: &TokenSeq,
    doc: &TokenSeq,
    keep: usize,
    radius: usize,
    n_r: usize,
    n_k: usize,
    rng: &mut RngStream,
) -> Result<BetaEstimate> {
    let len = doc.len();
    if radius == 0 || radius > len {
        return Err(Error::InvalidParams(format!(
            "beta needs 1 <= r <= T (r={radius}, T={len})"
        )));
    }
    if n_r == 0 || n_k == 0 {
        return Err(Error::InvalidParams("n_r and n_k must be at least 1".into()));
    }
    let perturbed = SubsetDistribution::new(len, radius)?;
    let kept = SubsetDistribution::new(len, keep)?;
    let mut samples = Vec::new();
    let mut pending: Vec<IndexSet> = Vec::with_capacity(BLOCK);
    for _ in 0..n_r {
        let a = sample_keep_set(perturbed, rng);
        for _ in 0..n_k {
            let b = sample_keep_set(kept, rng);
            if b.intersects(&a) {
                pending.push(b);
            }
        }
        if pending.len() >= BLOCK {
            samples.extend(score_masked(scorer, query.tokens(), doc.tokens(), &pending)?);
            pending.clear();
        }
    }
    samples.extend(score_masked(scorer, query.tokens(), doc.tokens(), &pending)?);

    let drawn = n_r * n_k;
    if samples.is_empty() {
        return Ok(BetaEstimate {
            beta: 1.0,
            retained: 0,
            drawn,
            fallback: true,
            samples,
        });
    }
    let (beta, _) = mean_std(&samples);
    Ok(BetaEstimate {
        beta,
        retained: samples.len(),
        drawn,
        fallback: false,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub smoothing: SmoothingConfig,
    /// Hypothetical perturbation sets per beta estimate.
    pub n_r: usize,
    /// Keep sets per perturbation set.
    pub n_k: usize,
    pub variant: BoundVariant,
    pub search: SearchMode,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        let smoothing = SmoothingConfig::default();
        CertifyConfig {
            n_r: 100,
            n_k: smoothing.n_certify,
            smoothing,
            variant: BoundVariant::Conservative,
            search: SearchMode::Linear,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        if self.n_r == 0 || self.n_k == 0 {
            return Err(Error::InvalidParams("n_r and n_k must be at least 1".into()));
        }
        if self.search == SearchMode::Binary && self.variant != BoundVariant::BetaOne {
            return Err(Error::InvalidParams(
                "binary search is only sound for the beta-one bound".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluated radius in a certificate's search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundStep {
    pub radius: usize,
    pub alpha: f64,
    /// `None` when the decision did not depend on beta.
    pub beta: Option<f64>,
    pub beta_retained: Option<usize>,
    pub beta_fallback: bool,
    pub delta: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub query_id: String,
    pub top_k: usize,
    pub doc_k: String,
    pub doc_k1: String,
    /// Token length of the rank-(K+1) document.
    pub doc_len: usize,
    pub keep_count: usize,
    pub radius: usize,
    pub r_rate: f64,
    pub variant: BoundVariant,
    pub g_k: f64,
    pub g_k1: f64,
    pub margin: f64,
    /// False only when the margin itself is negative, so not even `R = 0` holds.
    pub holds_at_radius: bool,
    /// `radius >= 1`
    pub certified: bool,
    pub trace: Vec<BoundStep>,
    pub seed: u64,
    pub mask_ratio: f64,
    pub n_certify: usize,
    pub n_r: usize,
    pub n_k: usize,
}

#[allow(clippy::too_many_arguments)]
fn bound_step(
    scorer: &dyn Scorer,
    query_id: &str,
    query: &TokenSeq,
    doc: &TokenSeq,
    keep: usize,
    radius: usize,
    margin: f64,
    cfg: &CertifyConfig,
) -> Result<BoundStep> {
    let len = doc.len();
    let alpha = alpha(len, keep);
    let delta = delta(len, keep, radius);
    // beta <= 1, so if the bound passes with beta = 1 the estimate cannot change the outcome
    let worst = BoundTerms { alpha, beta: 1.0, delta, variant: cfg.variant }.bound();
    let (beta, retained, fallback) = if radius == 0 || !cfg.variant.needs_beta() || margin - worst >= 0.0 {
        (None, None, false)
    } else {
        let mut rng = RngStream::named(
            cfg.smoothing.seed,
            &format!("certify.{query_id}.beta.r{radius}"),
        );
        let est = estimate_beta(scorer, query, doc, keep, radius, cfg.n_r, cfg.n_k, &mut rng)?;
        (Some(est.beta), Some(est.retained), est.fallback)
    };
    let bound = BoundTerms {
        alpha,
        beta: beta.unwrap_or(1.0),
        delta,
        variant: cfg.variant,
    }
    .bound();
    Ok(BoundStep {
        radius,
        alpha,
        beta,
        beta_retained: retained,
        beta_fallback: fallback,
        delta,
        bound,
        passed: margin - bound >= 0.0,
    })
}

/// Certifies the boundary pair `(x_K, x_{K+1})` of one query.
///
/// Both smoothed scores use `n_certify` copies drawn from the same stream,
/// so equal-length documents are compared on identical keep sets.
#[allow(clippy::too_many_arguments)]
pub fn certify_pair(
    scorer: &dyn Scorer,
    query_id: &str,
    query: &TokenSeq,
    top_k: usize,
    (id_k, doc_k): (&str, &TokenSeq),
    (id_k1, doc_k1): (&str, &TokenSeq),
    cfg: &CertifyConfig,
) -> Result<Certificate> {
    cfg.validate()?;
    let smoothing = &cfg.smoothing;
    let g_label = format!("certify.{query_id}.g");
    let g_k = smoothed_score_n(
        scorer,
        query,
        doc_k,
        smoothing,
        smoothing.n_certify,
        &mut RngStream::named(smoothing.seed, &g_label),
    )?
    .mean;
    let g_k1 = smoothed_score_n(
        scorer,
        query,
        doc_k1,
        smoothing,
        smoothing.n_certify,
        &mut RngStream::named(smoothing.seed, &g_label),
    )?
    .mean;
    let margin = g_k - g_k1;
    let len = doc_k1.len();
    let keep = smoothing.keep_count(len);

    let step = |radius| bound_step(scorer, query_id, query, doc_k1, keep, radius, margin, cfg);
    let mut trace = Vec::new();
    let mut radius = 0;
    match cfg.search {
        SearchMode::Linear => {
            for r in 0..=len {
                let s = step(r)?;
                let passed = s.passed;
                trace.push(s);
                if !passed {
                    break;
                }
                radius = r;
            }
        }
        SearchMode::Binary => {
            let first = step(0)?;
            let holds = first.passed;
            trace.push(first);
            if holds {
                // invariant: step(lo) passes; step(hi + 1) fails or hi == len
                let (mut lo, mut hi) = (0, len);
                while lo < hi {
                    let mid = lo + (hi - lo).div_ceil(2);
                    let s = step(mid)?;
                    let passed = s.passed;
                    trace.push(s);
                    if passed {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                radius = lo;
            }
            trace.sort_by_key(|s| s.radius);
        }
    }
    let holds_at_radius = trace.first().is_some_and(|s| s.passed);
    Ok(Certificate {
        query_id: query_id.to_string(),
        top_k,
        doc_k: id_k.to_string(),
        doc_k1: id_k1.to_string(),
        doc_len: len,
        keep_count: keep,
        radius,
        r_rate: radius as f64 / len as f64,
        variant: cfg.variant,
        g_k,
        g_k1,
        margin,
        holds_at_radius,
        certified: radius >= 1,
        trace,
        seed: smoothing.seed,
        mask_ratio: smoothing.mask_ratio,
        n_certify: smoothing.n_certify,
        n_r: cfg.n_r,
        n_k: cfg.n_k,
    })
}

/// Certifies a ranked candidate list at depth `K`. Every document below
/// rank `K` scores at most `g(x_{K+1})`, so the boundary pair decides.
pub fn certify_query(
    scorer: &dyn Scorer,
    query_id: &str,
    query: &TokenSeq,
    ranking: &[(String, TokenSeq)],
    top_k: usize,
    cfg: &CertifyConfig,
) -> Result<Certificate> {
    if top_k == 0 {
        return Err(Error::InvalidParams("K must be at least 1".into()));
    }
    if ranking.len() < top_k + 1 {
        return Err(Error::ShortRanking {
            len: ranking.len(),
            need: top_k + 1,
            k: top_k,
        });
    }
    let (id_k, doc_k) = &ranking[top_k - 1];
    let (id_k1, doc_k1) = &ranking[top_k];
    certify_pair(scorer, query_id, query, top_k, (id_k, doc_k), (id_k1, doc_k1), cfg)
}

/// Ranks a candidate set by smoothed score, using the same stream as
/// [`certify_pair`], and certifies its top-K boundary.
pub fn certify_candidates(
    scorer: &dyn Scorer,
    set: &CandidateSet,
    top_k: usize,
    cfg: &CertifyConfig,
) -> Result<Certificate> {
    cfg.validate()?;
    let g_label = format!("certify.{}.g", set.query_id);
    let mut scored = set
        .docs
        .iter()
        .map(|(id, doc)| {
            let mut rng = RngStream::named(cfg.smoothing.seed, &g_label);
            let g = smoothed_score_n(scorer, &set.query, doc, &cfg.smoothing, cfg.smoothing.n_certify, &mut rng)?.mean;
            Ok((g, id, doc))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let ranking: Vec<(String, TokenSeq)> = scored.into_iter().map(|(_, id, d)| (id.clone(), d.clone())).collect();
    certify_query(scorer, &set.query_id, &set.query, &ranking, top_k, cfg)
}

/// One row of the beta validation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaDivergenceRow {
    pub mask_ratio: f64,
    pub radius: usize,
    pub radius_frac: f64,
    /// Divergence between the filtered (beta) and unfiltered (g) samples;
    /// `None` when no sample survived the filter.
    pub jsd: Option<f64>,
    pub beta: Option<f64>,
    pub g_mean: f64,
    pub retained: usize,
    pub drawn: usize,
}

/// Compares the distribution of beta samples with that of plain smoothed
/// samples across radii.
///
/// One pool of `n_r × n_k` masked copies is drawn and scored once. Each
/// perturbation set is the length-`r` prefix of a random permutation, so
/// the sets are nested in `r` and the retained sample grows monotonically
/// toward the full pool.
#[allow(clippy::too_many_arguments)]
pub fn beta_divergence_sweep(
    scorer: &dyn Scorer,
    query: &TokenSeq,
    doc: &TokenSeq,
    mask_ratio: f64,
    rounding: Rounding,
    radius_fracs: &[f64],
    n_r: usize,
    n_k: usize,
    bins: usize,
    rng: &mut RngStream,
) -> Result<Vec<BetaDivergenceRow>> {
    if n_r == 0 || n_k == 0 {
        return Err(Error::InvalidParams("n_r and n_k must be at least 1".into()));
    }
    let len = doc.len();
    let keep = keep_count(len, mask_ratio, rounding);
    let kept = SubsetDistribution::new(len, keep)?;

    // for every copy, the earliest permutation slot its keep set touches
    let mut first_hit: Vec<usize> = Vec::with_capacity(n_r * n_k);
    let mut scores: Vec<f64> = Vec::with_capacity(n_r * n_k);
    let mut pending: Vec<IndexSet> = Vec::with_capacity(BLOCK);
    let mut slot = vec![0usize; len + 1];
    for _ in 0..n_r {
        let perm = sample_permutation(len, rng);
        for (i, p) in perm.iter().enumerate() {
            slot[*p] = i;
        }
        for _ in 0..n_k {
            let b = sample_keep_set(kept, rng);
            first_hit.push(b.as_slice().iter().map(|p| slot[*p]).min().unwrap_or(usize::MAX));
            pending.push(b);
        }
        if pending.len() >= BLOCK {
            scores.extend(score_masked(scorer, query.tokens(), doc.tokens(), &pending)?);
            pending.clear();
        }
    }
    scores.extend(score_masked(scorer, query.tokens(), doc.tokens(), &pending)?);
    let (g_mean, _) = mean_std(&scores);

    radius_fracs
        .iter()
        .map(|&frac| {
            let radius = ((frac * len as f64).round() as usize).clamp(1, len);
            let retained: Vec<f64> = scores
                .iter()
                .zip(&first_hit)
                .filter(|(_, hit)| **hit < radius)
                .map(|(s, _)| *s)
                .collect();
            let (jsd, beta) = if retained.is_empty() {
                (None, None)
            } else {
                (
                    Some(js_divergence(&retained, &scores, bins)?),
                    Some(mean_std(&retained).0),
                )
            };
            Ok(BetaDivergenceRow {
                mask_ratio,
                radius,
                radius_frac: frac,
                jsd,
                beta,
                g_mean,
                retained: retained.len(),
                drawn: scores.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::enumerate_keep_sets;
    use crate::scorer::{LexicalScorer, PairwiseJudgment, ScorerIdentity};
    use crate::text::tokenize;

    struct Constant(f64);

    impl Scorer for Constant {
        fn identity(&self) -> ScorerIdentity {
            ScorerIdentity { name: "constant".into(), version: "0".into() }
        }
        fn score(&self, _: &[String], _: &[String]) -> Result<f64> {
            Ok(self.0)
        }
        fn judge_pair(&self, _: &[String], _: &[String], _: &[String]) -> Result<PairwiseJudgment> {
            Ok(PairwiseJudgment::from_logits([0.0, 0.0]))
        }
    }

    /// Scores a document by whether its first token survives masking.
    struct FirstToken;

    impl Scorer for FirstToken {
        fn identity(&self) -> ScorerIdentity {
            ScorerIdentity { name: "first-token".into(), version: "0".into() }
        }
        fn score(&self, _: &[String], doc: &[String]) -> Result<f64> {
            Ok(if doc[0] == "top" { 1.0 } else { 0.0 })
        }
        fn judge_pair(&self, q: &[String], a: &[String], b: &[String]) -> Result<PairwiseJudgment> {
            Ok(PairwiseJudgment::from_logits([0.0, self.score(q, a)? - self.score(q, b)?]))
        }
    }

    fn seq(s: &str) -> TokenSeq {
        tokenize(s).unwrap()
    }

    /// Fraction of keep sets meeting `{1..R}`, by brute-force enumeration.
    fn enumerated_delta(t: usize, k: usize, r: usize) -> (u128, u128) {
        let hit = IndexSet::full(r);
        let dist = SubsetDistribution::new(t, k).unwrap();
        let mut total = 0;
        let mut hits = 0;
        for h in enumerate_keep_sets(dist, u64::MAX).unwrap() {
            total += 1;
            if h.intersects(&hit) {
                hits += 1;
            }
        }
        (hits, total)
    }

    #[test]
    fn alpha_and_delta_examples() {
        assert!((alpha(6, 3) - 0.05).abs() < 1e-15);
        assert_eq!(alpha(7, 7), 1.0);
        assert_eq!(alpha(7, 0), 1.0);
        assert_eq!(enumerated_delta(6, 3, 3), (19, 20));
        assert!((delta(6, 3, 3) - 0.95).abs() < 1e-15);
        assert_eq!(delta_exact(6, 3, 3).unwrap(), Ratio::new(19, 20));
        assert_eq!(delta(6, 3, 0), 0.0);
        assert_eq!(delta(6, 3, 4), 1.0);
        assert_eq!(alpha_exact(6, 3).unwrap(), Ratio::new(1, 20));
    }

    #[test]
    fn delta_is_monotone_and_saturates() {
        for t in 1..=12 {
            for k in 0..=t {
                let mut prev = 0.0;
                for r in 0..=t {
                    let d = delta(t, k, r);
                    assert!(d >= prev - 1e-15);
                    if r == 0 {
                        assert_eq!(d, 0.0);
                    }
                    if r > t - k {
                        assert_eq!(d, 1.0, "T={t} k={k} R={r}");
                    }
                    prev = d;
                }
            }
        }
    }

    #[test]
    fn delta_matches_enumeration() {
        for t in 1..=8 {
            for k in 0..=t {
                for r in 0..=t {
                    let (hits, total) = enumerated_delta(t, k, r);
                    assert_eq!(delta_exact(t, k, r).unwrap(), Ratio::new(hits, total));
                }
            }
        }
    }

    #[test]
    fn bound_variants_are_ordered() {
        for beta in [0.0, 0.3, 1.0] {
            let terms = |v| BoundTerms::new(8, 4, 2, beta, v).bound();
            let paper = terms(BoundVariant::Paper);
            let cons = terms(BoundVariant::Conservative);
            let one = terms(BoundVariant::BetaOne);
            assert!(paper <= cons && cons <= one);
        }
    }

    #[test]
    fn beta_with_full_radius_is_plain_mean() {
        let q = seq("a b");
        let x = seq("a c b d e f");
        let mut rng = RngStream::new(1, 1);
        let est = estimate_beta(&LexicalScorer, &q, &x, 3, 6, 10, 50, &mut rng).unwrap();
        assert_eq!(est.retained, 500);
        assert!(!est.fallback);
        let mut rng = RngStream::new(1, 1);
        let est = estimate_beta(&Constant(0.7), &q, &x, 3, 2, 10, 50, &mut rng).unwrap();
        assert_eq!(est.beta, 0.7);
        assert!(est.retained < 500);
    }

    #[test]
    fn beta_falls_back_when_nothing_survives() {
        let q = seq("a");
        let x = seq("a b c d e f g h i j");
        let mut rng = RngStream::new(1, 1);
        // k = 0 never intersects anything
        let est = estimate_beta(&LexicalScorer, &q, &x, 0, 2, 5, 5, &mut rng).unwrap();
        assert!(est.fallback);
        assert_eq!(est.beta, 1.0);
        assert!(estimate_beta(&LexicalScorer, &q, &x, 3, 0, 5, 5, &mut rng).is_err());
        assert!(estimate_beta(&LexicalScorer, &q, &x, 3, 11, 5, 5, &mut rng).is_err());
    }

    fn small_cfg(variant: BoundVariant) -> CertifyConfig {
        CertifyConfig {
            smoothing: SmoothingConfig { mask_ratio: 0.5, n_predict: 50, n_certify: 500, ..SmoothingConfig::default() },
            n_r: 20,
            n_k: 200,
            variant,
            search: SearchMode::Linear,
        }
    }

    #[test]
    fn no_margin_means_no_radius() {
        let q = seq("a b");
        let x = seq("a b c d");
        let cert = certify_pair(&Constant(0.4), "q", &q, 1, ("d1", &x), ("d2", &x), &small_cfg(BoundVariant::Conservative)).unwrap();
        assert_eq!(cert.radius, 0);
        assert_eq!(cert.r_rate, 0.0);
        assert!(!cert.certified);

        let weak = seq("c d e f");
        let cert = certify_pair(&LexicalScorer, "q", &q, 1, ("weak", &weak), ("strong", &x), &small_cfg(BoundVariant::Paper)).unwrap();
        assert_eq!(cert.radius, 0);
        assert!(!cert.holds_at_radius);
    }

    #[test]
    fn beta_one_radius_matches_delta_scan() {
        // FirstToken gives g = P(position 1 kept) = k/T for "top ..." and 0 otherwise
        let q = seq("q");
        let strong = seq("top a b c d e f g h i");
        let weak = seq("x a b c d e f g h i");
        for search in [SearchMode::Linear, SearchMode::Binary] {
            let mut cfg = small_cfg(BoundVariant::BetaOne);
            cfg.smoothing.mask_ratio = 0.8;
            cfg.search = search;
            let cert = certify_pair(&FirstToken, "q", &q, 1, ("s", &strong), ("w", &weak), &cfg).unwrap();
            let keep = cert.keep_count;
            let scan = (0..=10).take_while(|r| delta(10, keep, *r) <= cert.margin).last().unwrap();
            assert_eq!(cert.radius, scan, "{search:?}");
        }
    }

    #[test]
    fn certificate_boundary_property() {
        let q = seq("a b");
        let x_k = seq("a b a c d e");
        let x_k1 = seq("a c d e f g");
        for variant in BoundVariant::ALL {
            let cert = certify_pair(&LexicalScorer, "q7", &q, 1, ("k", &x_k), ("k1", &x_k1), &small_cfg(variant)).unwrap();
            let at = cert.trace.iter().find(|s| s.radius == cert.radius).unwrap();
            assert!(at.passed);
            if cert.radius < cert.doc_len {
                let next = cert.trace.iter().find(|s| s.radius == cert.radius + 1).unwrap();
                assert!(!next.passed);
            }
            for s in &cert.trace {
                assert!(s.bound <= s.delta + 1e-15);
            }
        }
    }

    #[test]
    fn variant_radii_are_ordered() {
        let q = seq("a b");
        let x_k = seq("a b a c d e");
        let x_k1 = seq("a c d e f g");
        let radii: Vec<usize> = BoundVariant::ALL
            .iter()
            .map(|v| certify_pair(&LexicalScorer, "q", &q, 1, ("k", &x_k), ("k1", &x_k1), &small_cfg(*v)).unwrap().radius)
            .collect();
        assert!(radii[0] >= radii[1] && radii[1] >= radii[2], "{radii:?}");
    }

    #[test]
    fn query_level_checks() {
        let q = seq("a b");
        let ranking: Vec<(String, TokenSeq)> = vec![
            ("d1".into(), seq("a b c")),
            ("d2".into(), seq("a c d")),
        ];
        let cfg = small_cfg(BoundVariant::Conservative);
        let err = certify_query(&LexicalScorer, "q", &q, &ranking[..1], 1, &cfg);
        assert!(matches!(err, Err(Error::ShortRanking { len: 1, need: 2, k: 1 })));
        assert!(certify_query(&LexicalScorer, "q", &q, &ranking, 0, &cfg).is_err());
        let tied = vec![("d1".into(), seq("a c d")), ("d2".into(), seq("a c d"))];
        let cert = certify_query(&LexicalScorer, "q", &q, &tied, 1, &cfg).unwrap();
        assert_eq!(cert.radius, 0);
        let cert = certify_query(&LexicalScorer, "q", &q, &ranking, 1, &cfg).unwrap();
        assert_eq!(cert.doc_k, "d1");
        assert_eq!(cert.doc_k1, "d2");
    }

    #[test]
    fn binary_search_rejected_for_estimated_bounds() {
        let mut cfg = small_cfg(BoundVariant::Conservative);
        cfg.search = SearchMode::Binary;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_converges_to_full_pool() {
        let q = seq("a b");
        let x = TokenSeq::from_tokens((0..12).map(|i| ["a", "b", "c"][i % 3].to_string())).unwrap();
        let mut rng = RngStream::new(5, 5);
        let rows = beta_divergence_sweep(&LexicalScorer, &q, &x, 0.5, Rounding::HalfUp, &[0.1, 0.5, 0.9], 50, 100, 50, &mut rng).unwrap();
        assert_eq!(rows.len(), 3);
        // r = 11 > T - k = 6: every keep set intersects, so the pools coincide
        assert_eq!(rows[2].retained, rows[2].drawn);
        assert!(rows[2].jsd.unwrap() < 1e-12);
        assert!(rows[0].retained <= rows[1].retained);
    }

    #[test]
    fn variant_parsing() {
        for v in BoundVariant::ALL {
            assert_eq!(v.to_string().parse::<BoundVariant>().unwrap(), v);
        }
        assert!("nope".parse::<BoundVariant>().is_err());
    }
}
