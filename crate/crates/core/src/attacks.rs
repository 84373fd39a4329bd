//! Word-substitution attacks under a Hamming budget, and the harness that
//! measures how often they push a document into the top K.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::binom_f64;
use crate::smoothing::{CandidateSet, Ranker};
use crate::text::{hamming_distance, tokenize, TokenSeq, MASK_TOKEN};

/// Largest candidate count `brute_force_attack` will enumerate.
pub const BRUTE_FORCE_CAP: f64 = 1e7;

const BATCH: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackBudget {
    /// Maximum number of substituted positions.
    pub radius: usize,
    /// Substitute tokens.
    pub vocab: Vec<String>,
}

impl AttackBudget {
    pub fn new(radius: usize, vocab: Vec<String>) -> Result<Self> {
        let mut vocab = vocab;
        vocab.sort();
        vocab.dedup();
        if vocab.is_empty() {
            return Err(Error::InvalidParams("attack vocabulary is empty".into()));
        }
        if let Some(bad) = vocab
            .iter()
            .find(|t| t.is_empty() || *t == MASK_TOKEN || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidParams(format!("bad substitute token {bad:?}")));
        }
        Ok(AttackBudget { radius, vocab })
    }

    fn check_doc(&self, doc: &TokenSeq) -> Result<()> {
        if self.radius > doc.len() {
            return Err(Error::InvalidParams(format!(
                "radius {} exceeds document length {}",
                self.radius,
                doc.len()
            )));
        }
        Ok(())
    }

    /// `|V|^R · C(T, R)`
    pub fn brute_force_size(&self, len: usize) -> f64 {
        (self.vocab.len() as f64).powi(self.radius as i32) * binom_f64(len, self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub adversarial: TokenSeq,
    pub original_score: f64,
    pub score: f64,
    /// Score the adversarial document had to beat.
    pub target: Option<f64>,
    pub success: bool,
    /// Hamming distance between the original and adversarial document.
    pub substitutions: usize,
    /// Set when the greedy search ran out of improving moves.
    pub early_stop: bool,
    /// Candidate documents scored.
    pub evaluated: usize,
}

fn beats(score: f64, target: Option<f64>) -> bool {
    target.is_some_and(|t| score > t)
}

fn substitute(doc: &TokenSeq, positions: &[usize], tokens: &[&String]) -> TokenSeq {
    let mut out = doc.tokens().to_vec();
    for (p, t) in positions.iter().zip(tokens) {
        out[p - 1] = (*t).clone();
    }
    TokenSeq::from_tokens(out).expect("substitutes are validated tokens")
}

/// Scores a batch in parallel; returns the best (score, index), earliest
/// index winning ties.
fn best_of(ranker: &dyn Ranker, query: &TokenSeq, batch: &[TokenSeq]) -> Result<Option<(f64, usize)>> {
    let scores = batch
        .par_iter()
        .map(|d| ranker.rank_score(query, d))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores
        .into_iter()
        .enumerate()
        .fold(None, |best: Option<(f64, usize)>, (i, s)| match best {
            Some((b, _)) if s <= b => best,
            _ => Some((s, i)),
        }))
}

/// Tries every document within Hamming distance `budget.radius` of `doc`
/// and returns the highest-scoring one. Succeeds if that score exceeds
/// `target`.
pub fn brute_force_attack(
    ranker: &dyn Ranker,
    query: &TokenSeq,
    doc: &TokenSeq,
    budget: &AttackBudget,
    target: Option<f64>,
) -> Result<AttackResult> {
    brute_force(ranker, query, doc, budget, target, false)
}

/// Like [`brute_force_attack`] but stops at the first document, in
/// enumeration order, that beats `target`. Returns `None` if none does.
pub fn brute_force_counterexample(
    ranker: &dyn Ranker,
    query: &TokenSeq,
    doc: &TokenSeq,
    budget: &AttackBudget,
    target: f64,
) -> Result<Option<AttackResult>> {
    let r = brute_force(ranker, query, doc, budget, Some(target), true)?;
    Ok(r.success.then_some(r))
}

fn brute_force(
    ranker: &dyn Ranker,
    query: &TokenSeq,
    doc: &TokenSeq,
    budget: &AttackBudget,
    target: Option<f64>,
    stop_on_success: bool,
) -> Result<AttackResult> {
    budget.check_doc(doc)?;
    let size = budget.brute_force_size(doc.len());
    if size > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            count: size,
            cap: BRUTE_FORCE_CAP as u64,
        });
    }
    let original_score = ranker.rank_score(query, doc)?;
    let mut best = (original_score, doc.clone());
    let mut evaluated = 1;
    let toks = doc.tokens();
    'radii: for r in 1..=budget.radius {
        if stop_on_success && beats(best.0, target) {
            break;
        }
        let candidates = (1..=doc.len()).combinations(r).flat_map(|positions| {
            std::iter::repeat_n(budget.vocab.iter(), r)
                .multi_cartesian_product()
                // assignments that keep an original token are covered at a smaller radius
                .filter(|assign| positions.iter().zip(assign).all(|(p, t)| toks[p - 1] != **t))
                .map(|assign| substitute(doc, &positions, &assign))
                .collect::<Vec<_>>()
        });
        for chunk in &candidates.chunks(BATCH) {
            let batch: Vec<TokenSeq> = chunk.collect();
            evaluated += batch.len();
            if let Some((score, i)) = best_of(ranker, query, &batch)? {
                if score > best.0 {
                    best = (score, batch[i].clone());
                }
            }
            if stop_on_success && beats(best.0, target) {
                break 'radii;
            }
        }
    }
    let (score, adversarial) = best;
    Ok(AttackResult {
        substitutions: hamming_distance(toks, adversarial.tokens())?,
        adversarial,
        original_score,
        score,
        target,
        success: beats(score, target),
        early_stop: false,
        evaluated,
    })
}

/// Greedy word substitution: each round makes the single untouched
/// (position, token) swap with the largest score gain, stopping when the
/// budget runs out, nothing improves, or the target is beaten.
pub fn greedy_substitution_attack(
    ranker: &dyn Ranker,
    query: &TokenSeq,
    doc: &TokenSeq,
    budget: &AttackBudget,
    target: Option<f64>,
) -> Result<AttackResult> {
    if budget.radius == 0 {
        return Err(Error::InvalidParams("greedy attack needs radius >= 1".into()));
    }
    budget.check_doc(doc)?;
    let original_score = ranker.rank_score(query, doc)?;
    let mut current = doc.clone();
    let mut score = original_score;
    let mut touched = vec![false; doc.len()];
    let mut evaluated = 1;
    let mut early_stop = false;
    for _ in 0..budget.radius {
        if beats(score, target) {
            break;
        }
        let moves: Vec<(usize, &String)> = (1..=doc.len())
            .filter(|p| !touched[p - 1])
            .flat_map(|p| budget.vocab.iter().map(move |t| (p, t)))
            .filter(|(p, t)| current.tokens()[p - 1] != **t)
            .collect();
        let candidates: Vec<TokenSeq> = moves
            .iter()
            .map(|(p, t)| substitute(&current, &[*p], &[*t]))
            .collect();
        evaluated += candidates.len();
        match best_of(ranker, query, &candidates)? {
            Some((best, i)) if best > score => {
                touched[moves[i].0 - 1] = true;
                current = candidates.into_iter().nth(i).unwrap();
                score = best;
            }
            _ => {
                early_stop = true;
                break;
            }
        }
    }
    Ok(AttackResult {
        substitutions: hamming_distance(doc.tokens(), current.tokens())?,
        adversarial: current,
        original_score,
        score,
        target,
        success: beats(score, target),
        early_stop,
        evaluated,
    })
}

/// Output of [`keyword_stuff`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StuffedDoc {
    pub adversarial: TokenSeq,
    /// Query tokens prepended.
    pub inserted: usize,
    /// Positions that differ from the original after the shift.
    pub hamming: usize,
}

pub const DEFAULT_STUFF_FRACTION: f64 = 0.05;

/// Prepends `floor(fraction · T)` query tokens (cycling through the query)
/// and drops as many tokens from the end, so the length is unchanged.
pub fn keyword_stuff(
    query: &[String],
    doc: &TokenSeq,
    fraction: f64,
    max_fraction: f64,
) -> Result<StuffedDoc> {
    if !(0.0..=max_fraction).contains(&fraction) {
        return Err(Error::BudgetTooLarge(format!(
            "stuffing fraction {fraction} outside [0, {max_fraction}]"
        )));
    }
    let count = ((fraction * doc.len() as f64) + 1e-9).floor() as usize;
    let count = count.min(doc.len());
    if count == 0 || query.is_empty() {
        return Ok(StuffedDoc {
            adversarial: doc.clone(),
            inserted: 0,
            hamming: 0,
        });
    }
    let tokens: Vec<String> = query
        .iter()
        .cycle()
        .take(count)
        .chain(&doc.tokens()[..doc.len() - count])
        .cloned()
        .collect();
    let adversarial = TokenSeq::from_tokens(tokens)?;
    Ok(StuffedDoc {
        hamming: hamming_distance(doc.tokens(), adversarial.tokens())?,
        adversarial,
        inserted: count,
    })
}

/// An externally produced adversarial version of a candidate document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedAdversarial {
    pub query_id: String,
    pub doc_id: String,
    pub tokens: TokenSeq,
}

/// Parses `query_id \t doc_id \t adversarial_text` lines.
pub fn parse_precomputed(text: &str) -> Result<Vec<PrecomputedAdversarial>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        let [qid, did, body] = cols.as_slice() else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected query_id, doc_id and text separated by tabs".into(),
            });
        };
        if body.contains(MASK_TOKEN) {
            return Err(Error::SentinelCollision { line: line_no });
        }
        let tokens = tokenize(body).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(PrecomputedAdversarial {
            query_id: qid.trim().to_string(),
            doc_id: did.trim().to_string(),
            tokens,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackSpec {
    KeywordStuffing { fraction: f64, max_fraction: f64 },
    Greedy { budget: AttackBudget },
    BruteForce { budget: AttackBudget },
    Precomputed { docs: Vec<PrecomputedAdversarial> },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::KeywordStuffing { .. } => "keyword-stuffing",
            AttackSpec::Greedy { .. } => "greedy",
            AttackSpec::BruteForce { .. } => "brute-force",
            AttackSpec::Precomputed { .. } => "precomputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub target_doc: String,
    /// Score of the K-th best competing document.
    pub threshold: f64,
    pub original_score: f64,
    pub score: f64,
    pub success: bool,
    pub hamming: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    /// `None` when the ranker has no document outside the top K to attack.
    pub base: Option<AttackOutcome>,
    pub smoothed: Option<AttackOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub attempted: usize,
    pub succeeded: usize,
    /// Attack success rate, percent.
    pub asr: f64,
    /// `100 - asr`
    pub dsr: f64,
}

impl RateSummary {
    fn from_outcomes<'a>(outcomes: impl Iterator<Item = &'a AttackOutcome>) -> Self {
        let (attempted, succeeded) = outcomes.fold((0, 0), |(a, s), o| (a + 1, s + usize::from(o.success)));
        let asr = if attempted == 0 {
            0.0
        } else {
            100.0 * succeeded as f64 / attempted as f64
        };
        RateSummary {
            attempted,
            succeeded,
            asr,
            dsr: 100.0 - asr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub attack: String,
    pub top_k: usize,
    pub base: RateSummary,
    pub smoothed: RateSummary,
    pub queries: Vec<QueryOutcome>,
}

fn attack_one(
    ranker: &dyn Ranker,
    attack: &AttackSpec,
    set: &CandidateSet,
    top_k: usize,
) -> Result<Option<AttackOutcome>> {
    let scores = set
        .docs
        .iter()
        .map(|(id, d)| Ok((id.as_str(), ranker.rank_score(&set.query, d)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].1.total_cmp(&scores[a].1).then_with(|| scores[a].0.cmp(scores[b].0)));

    let target = match attack {
        AttackSpec::Precomputed { docs } => {
            let Some(adv) = docs.iter().find(|a| a.query_id == set.query_id) else {
                return Ok(None);
            };
            match order.iter().position(|&i| scores[i].0 == adv.doc_id) {
                Some(rank) if rank >= top_k => order[rank],
                _ => return Ok(None),
            }
        }
        _ => match order.get(top_k) {
            Some(&i) => i,
            None => return Ok(None),
        },
    };
    let mut rivals: Vec<f64> = order.iter().filter(|&&i| i != target).map(|&i| scores[i].1).collect();
    rivals.truncate(top_k);
    let Some(&threshold) = rivals.last() else {
        return Ok(None);
    };

    let (_, doc) = &set.docs[target];
    let (adversarial, score) = match attack {
        AttackSpec::KeywordStuffing { fraction, max_fraction } => {
            let stuffed = keyword_stuff(set.query.tokens(), doc, *fraction, *max_fraction)?;
            let score = ranker.rank_score(&set.query, &stuffed.adversarial)?;
            (stuffed.adversarial, score)
        }
        AttackSpec::Greedy { budget } => {
            let r = greedy_substitution_attack(ranker, &set.query, doc, budget, Some(threshold))?;
            (r.adversarial, r.score)
        }
        AttackSpec::BruteForce { budget } => {
            let r = brute_force_attack(ranker, &set.query, doc, budget, Some(threshold))?;
            (r.adversarial, r.score)
        }
        AttackSpec::Precomputed { docs } => {
            let adv = docs.iter().find(|a| a.query_id == set.query_id).unwrap();
            (adv.tokens.clone(), ranker.rank_score(&set.query, &adv.tokens)?)
        }
    };
    let hamming = if adversarial.len() == doc.len() {
        hamming_distance(doc.tokens(), adversarial.tokens())?
    } else {
        doc.len().max(adversarial.len())
    };
    Ok(Some(AttackOutcome {
        target_doc: set.docs[target].0.clone(),
        threshold,
        original_score: scores[target].1,
        score,
        success: score > threshold,
        hamming,
    }))
}

/// Attacks the strongest document outside the top K of each query, once
/// against each ranker, and reports how often it enters the top K.
pub fn evaluate_defense(
    base: &dyn Ranker,
    smoothed: &dyn Ranker,
    attack: &AttackSpec,
    sets: &[CandidateSet],
    top_k: usize,
) -> Result<DefenseReport> {
    if top_k == 0 {
        return Err(Error::InvalidParams("K must be at least 1".into()));
    }
    let queries = sets
        .par_iter()
        .map(|set| {
            Ok(QueryOutcome {
                query_id: set.query_id.clone(),
                base: attack_one(base, attack, set, top_k)?,
                smoothed: attack_one(smoothed, attack, set, top_k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DefenseReport {
        attack: attack.name().to_string(),
        top_k,
        base: RateSummary::from_outcomes(queries.iter().filter_map(|q| q.base.as_ref())),
        smoothed: RateSummary::from_outcomes(queries.iter().filter_map(|q| q.smoothed.as_ref())),
        queries,
    })
}
