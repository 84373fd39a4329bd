//! Trainable hashed linear pairwise scorer.
//!
//! Each (query, document) pair is mapped to a sparse feature vector over
//! 2^16 FNV-1a buckets; a `buckets × 2` weight matrix turns it into a
//! two-class logit vector `g(x)`. Pairs are judged by
//! `softmax(g(x_i) - g(x_j))`, and the pointwise score of `x` is the class-1
//! probability of `x` against an all-`[MASK]` document of the same length,
//! so both pathways read the same weights.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{pairwise_loss, PairwiseJudgment, Scorer, ScorerIdentity};
use crate::error::{Error, Result};
use crate::sampling::{fnv1a64, keep_count, sample_keep_set, RngStream, Rounding, SubsetDistribution};
use crate::text::{mask_tokens, TokenSeq, MASK_TOKEN};

pub const HASH_BUCKETS: u32 = 1 << 16;

const FORMAT: &str = "maskcert.hashed-linear";
const FORMAT_VERSION: u32 = 1;
/// Document length feature is scaled by the ingestion limit.
const LENGTH_SCALE: f64 = 256.0;

type SparseVec = Vec<(u32, f64)>;

/// One training example: a query with a more and a less relevant document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: TokenSeq,
    pub positive: TokenSeq,
    pub negative: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Fraction of each document masked during augmentation.
    pub mask_ratio: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Also train on every triplet with its documents swapped and the label flipped.
    pub balance_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_ratio: 0.0,
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 16,
            seed: 42,
            balance_labels: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidParams(format!(
                "training mask ratio must be in [0, 1), got {}",
                self.mask_ratio
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the masked batches seen during the epoch.
    pub train_loss: f64,
    /// Loss over the unmasked dataset after the epoch's updates.
    pub eval_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
    /// Training labels seen, indexed by class.
    pub label_counts: [usize; 2],
    /// Whether `eval_loss` never rose by more than 1e-6 between epochs.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HashedLinearScorer {
    weights: BTreeMap<u32, [f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format: String,
    version: u32,
    buckets: u32,
    /// `[bucket, class-0 weight, class-1 weight]`, sorted by bucket.
    weights: Vec<(u32, f64, f64)>,
}

impl HashedLinearScorer {
    pub const NAME: &'static str = "builtin-hashed-linear";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    /// Two-class logit vector `g(x)` for one document.
    pub fn logits(&self, query: &[String], doc: &[String]) -> [f64; 2] {
        self.dot(&features(query, doc))
    }

    fn dot(&self, feats: &SparseVec) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (bucket, value) in feats {
            if let Some(w) = self.weights.get(bucket) {
                out[0] += w[0] * value;
                out[1] += w[1] * value;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WeightFile {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            buckets: HASH_BUCKETS,
            weights: self.weights.iter().map(|(b, w)| (*b, w[0], w[1])).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != FORMAT_VERSION {
            return Err(Error::InvalidParams(format!(
                "unsupported weight file {} v{}",
                file.format, file.version
            )));
        }
        if file.buckets != HASH_BUCKETS {
            return Err(Error::InvalidParams(format!(
                "weight file uses {} buckets, expected {HASH_BUCKETS}",
                file.buckets
            )));
        }
        let mut weights = BTreeMap::new();
        for (bucket, w0, w1) in file.weights {
            if bucket >= HASH_BUCKETS || !w0.is_finite() || !w1.is_finite() {
                return Err(Error::InvalidParams(format!("bad weight entry for bucket {bucket}")));
            }
            weights.insert(bucket, [w0, w1]);
        }
        Ok(HashedLinearScorer { weights })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.weights.len() * 20);
        for (b, w) in &self.weights {
            bytes.extend_from_slice(&b.to_le_bytes());
            bytes.extend_from_slice(&w[0].to_bits().to_le_bytes());
            bytes.extend_from_slice(&w[1].to_bits().to_le_bytes());
        }
        fnv1a64(&bytes)
    }
}

impl Scorer for HashedLinearScorer {
    fn identity(&self) -> ScorerIdentity {
        ScorerIdentity {
            name: Self::NAME.to_string(),
            version: format!("{FORMAT_VERSION}+{:016x}", self.fingerprint()),
        }
    }

    fn score(&self, query: &[String], doc: &[String]) -> Result<f64> {
        if query.is_empty() || doc.is_empty() {
            return Err(Error::EmptyText);
        }
        let reference = vec![MASK_TOKEN.to_string(); doc.len()];
        let judgment = self.judge_pair(query, doc, &reference)?;
        Ok(judgment.probs[1].clamp(0.0, 1.0))
    }

    fn judge_pair(
        &self,
        query: &[String],
        doc_i: &[String],
        doc_j: &[String],
    ) -> Result<PairwiseJudgment> {
        if query.is_empty() || doc_i.is_empty() || doc_j.is_empty() {
            return Err(Error::EmptyText);
        }
        let gi = self.logits(query, doc_i);
        let gj = self.logits(query, doc_j);
        Ok(PairwiseJudgment::from_logits([gi[0] - gj[0], gi[1] - gj[1]]))
    }
}

fn bucket(name: &str) -> u32 {
    (fnv1a64(name.as_bytes()) % u64::from(HASH_BUCKETS)) as u32
}

/// Sparse features: document unigrams, query×document token pairs,
/// overlap count, length, and the number of masked positions.
fn features(query: &[String], doc: &[String]) -> SparseVec {
    let len = doc.len().max(1) as f64;
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    let mut masked = 0usize;
    for tok in doc {
        if tok == MASK_TOKEN {
            masked += 1;
            continue;
        }
        *acc.entry(bucket(&format!("u\u{1f}{tok}"))).or_default() += 1.0 / len;
        for q in query {
            *acc.entry(bucket(&format!("p\u{1f}{q}\u{1f}{tok}"))).or_default() += 1.0 / len;
        }
    }
    let overlap = super::LexicalScorer::overlap(query, doc) as f64;
    *acc.entry(bucket("overlap")).or_default() += overlap / query.len().max(1) as f64;
    *acc.entry(bucket("len")).or_default() += doc.len() as f64 / LENGTH_SCALE;
    *acc.entry(bucket("mask")).or_default() += masked as f64 / len;
    acc.into_iter().collect()
}

fn sparse_sub(a: &SparseVec, b: &SparseVec) -> SparseVec {
    let mut acc: BTreeMap<u32, f64> = a.iter().copied().collect();
    for (k, v) in b {
        *acc.entry(*k).or_default() -= v;
    }
    acc.into_iter().collect()
}

fn mask_doc(doc: &TokenSeq, mask_ratio: f64, rng: &mut RngStream) -> Vec<String> {
    if mask_ratio == 0.0 {
        return doc.tokens().to_vec();
    }
    let keep = keep_count(doc.len(), mask_ratio, Rounding::HalfUp);
    let dist = SubsetDistribution { len: doc.len(), keep };
    mask_tokens(doc.tokens(), &sample_keep_set(dist, rng))
}

/// `(feature difference, label)` pairs for one triplet.
fn oriented(pos: &SparseVec, neg: &SparseVec, balance: bool) -> Vec<(SparseVec, [f64; 2])> {
    let mut out = vec![(sparse_sub(pos, neg), [0.0, 1.0])];
    if balance {
        out.push((sparse_sub(neg, pos), [1.0, 0.0]));
    }
    out
}

fn dataset_loss(model: &HashedLinearScorer, data: &[Triplet], balance: bool) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for t in data {
        let pos = features(t.query.tokens(), t.positive.tokens());
        let neg = features(t.query.tokens(), t.negative.tokens());
        for (diff, y) in oriented(&pos, &neg, balance) {
            total += pairwise_loss(model.dot(&diff), [0.0, 0.0], y).loss;
            count += 1;
        }
    }
    total / count as f64
}

/// Plain mini-batch SGD on the pairwise loss, with optional masking
/// augmentation. Fully determined by `cfg.seed`.
pub fn train_pairwise(
    data: &[Triplet],
    cfg: &TrainConfig,
) -> Result<(HashedLinearScorer, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut model = HashedLinearScorer::new();
    let mut order_rng = RngStream::named(cfg.seed, "train.order");
    let mut mask_rng = RngStream::named(cfg.seed, "train.mask");
    let initial_loss = dataset_loss(&model, data, cfg.balance_labels);
    let mut label_counts = [0usize; 2];
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
            let mut count = 0usize;
            for &idx in batch {
                let t = &data[idx];
                let pos = mask_doc(&t.positive, cfg.mask_ratio, &mut mask_rng);
                let neg = mask_doc(&t.negative, cfg.mask_ratio, &mut mask_rng);
                let pos = features(t.query.tokens(), &pos);
                let neg = features(t.query.tokens(), &neg);
                for (diff, y) in oriented(&pos, &neg, cfg.balance_labels) {
                    let out = pairwise_loss(model.dot(&diff), [0.0, 0.0], y);
                    epoch_loss += out.loss;
                    for (b, v) in &diff {
                        let g = grad.entry(*b).or_default();
                        g[0] += v * out.grad_i[0];
                        g[1] += v * out.grad_i[1];
                    }
                    label_counts[usize::from(y[1] == 1.0)] += 1;
                    count += 1;
                }
            }
            epoch_count += count;
            let step = cfg.learning_rate / count as f64;
            for (b, g) in grad {
                let w = model.weights.entry(b).or_default();
                w[0] -= step * g[0];
                w[1] -= step * g[1];
            }
        }
        epochs.push(EpochLog {
            epoch: epoch + 1,
            train_loss: epoch_loss / epoch_count as f64,
            eval_loss: dataset_loss(&model, data, cfg.balance_labels),
        });
    }

    let mut prev = initial_loss;
    let mut monotone = true;
    for e in &epochs {
        if e.eval_loss > prev + 1e-6 {
            monotone = false;
        }
        prev = e.eval_loss;
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            epochs,
            label_counts,
            monotone,
        },
    ))
}
