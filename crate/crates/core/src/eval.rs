//! Ranking and certification metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::certify::Certificate;
use crate::error::{Error, Result};

/// Ranked lists keyed by query id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunList {
    /// Run tag, e.g. `base` or `smoothed`.
    pub tag: String,
    pub queries: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunList {
    pub fn new(tag: impl Into<String>) -> Self {
        RunList {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    /// Adds a ranked list, which must be sorted by non-increasing score
    /// with unique document ids.
    pub fn insert(&mut self, query_id: impl Into<String>, ranked: Vec<(String, f64)>) -> Result<()> {
        let query_id = query_id.into();
        if ranked.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::InvalidParams(format!(
                "run for query {query_id} is not sorted by score"
            )));
        }
        let mut seen = HashSet::new();
        if let Some((dup, _)) = ranked.iter().find(|(d, _)| !seen.insert(d.as_str())) {
            return Err(Error::InvalidParams(format!(
                "document {dup} appears twice for query {query_id}"
            )));
        }
        self.queries.insert(query_id, ranked);
        Ok(())
    }

    /// Parses `qid Q0 docid rank score tag` lines. Lists are ordered by the
    /// rank column.
    pub fn parse_trec(text: &str) -> Result<Self> {
        let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        let mut tag = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 6 columns, found {}", cols.len()),
                });
            }
            let rank: usize = cols[3].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad rank `{}`", cols[3]),
            })?;
            let score: f64 = cols[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("bad score `{}`", cols[4]),
                })?;
            tag.get_or_insert_with(|| cols[5].to_string());
            let entries = rows.entry(cols[0].to_string()).or_default();
            if entries.iter().any(|(_, d, _)| d == cols[2]) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate document {} for query {}", cols[2], cols[0]),
                });
            }
            entries.push((rank, cols[2].to_string(), score));
        }
        let mut run = RunList::new(tag.unwrap_or_default());
        for (qid, mut entries) in rows {
            entries.sort_by_key(|(rank, _, _)| *rank);
            let ranked = entries.into_iter().map(|(_, d, s)| (d, s)).collect();
            run.insert(qid, ranked)?;
        }
        Ok(run)
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (qid, ranked) in &self.queries {
            for (i, (doc, score)) in ranked.iter().enumerate() {
                let _ = writeln!(out, "{qid} Q0 {doc} {} {score} {}", i + 1, self.tag);
            }
        }
        out
    }
}

/// Graded judgments, labels in `0..=3`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels {
    pub labels: BTreeMap<String, BTreeMap<String, u8>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, label: u8) -> Result<()> {
        if label > 3 {
            return Err(Error::InvalidParams(format!("label {label} outside 0..=3")));
        }
        self.labels
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), label);
        Ok(())
    }

    pub fn label(&self, query_id: &str, doc_id: &str) -> u8 {
        self.labels
            .get(query_id)
            .and_then(|q| q.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// Parses `qid 0 docid label` lines.
    pub fn parse_trec(text: &str) -> Result<Self> {
        let mut qrels = Qrels::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let parsed = match cols.as_slice() {
                [qid, _, doc, label] => label.parse::<u8>().ok().filter(|l| *l <= 3).map(|l| (qid, doc, l)),
                _ => None,
            };
            let (qid, doc, label) = parsed.ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `qid 0 docid label` with label in 0..=3".into(),
            })?;
            qrels.insert(qid, doc, label)?;
        }
        Ok(qrels)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gain {
    /// `2^label - 1`
    #[default]
    Exponential,
    /// `label`
    Linear,
}

impl Gain {
    fn apply(self, label: u8) -> f64 {
        match self {
            Gain::Exponential => f64::from((1u32 << label) - 1),
            Gain::Linear => f64::from(label),
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParams("cutoff k must be at least 1".into()));
    }
    Ok(())
}

/// Mean reciprocal rank of the first document labelled `>= 1` within the
/// top `k`, over the queries in the run.
pub fn mrr_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_k(k)?;
    if run.queries.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = run
        .queries
        .iter()
        .map(|(qid, ranked)| {
            ranked
                .iter()
                .take(k)
                .position(|(doc, _)| qrels.label(qid, doc) >= 1)
                .map_or(0.0, |p| 1.0 / (p + 1) as f64)
        })
        .sum();
    Ok(total / run.queries.len() as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// Mean NDCG@k over the queries in the run. A query whose ideal DCG is zero
/// contributes 0.
pub fn ndcg_at_k(run: &RunList, qrels: &Qrels, k: usize, gain: Gain) -> Result<f64> {
    check_k(k)?;
    if run.queries.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = run
        .queries
        .iter()
        .map(|(qid, ranked)| {
            let actual = dcg(ranked.iter().take(k).map(|(d, _)| gain.apply(qrels.label(qid, d))));
            let mut ideal: Vec<u8> = qrels
                .labels
                .get(qid)
                .map(|m| m.values().copied().collect())
                .unwrap_or_default();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let ideal = dcg(ideal.into_iter().take(k).map(|l| gain.apply(l)));
            if ideal > 0.0 {
                actual / ideal
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / run.queries.len() as f64)
}

fn same_k(certs: &[Certificate]) -> Result<usize> {
    let first = certs.first().ok_or(Error::Empty("certificates"))?;
    match certs.iter().find(|c| c.top_k != first.top_k) {
        Some(other) => Err(Error::MixedK(first.top_k, other.top_k)),
        None => Ok(first.top_k),
    }
}

/// Fraction of queries certified at radius `>= min_radius`.
pub fn crq(certs: &[Certificate], min_radius: usize) -> Result<f64> {
    same_k(certs)?;
    let hits = certs.iter().filter(|c| c.radius >= min_radius).count();
    Ok(hits as f64 / certs.len() as f64)
}

/// Mean certified radius in tokens.
pub fn mcr(certs: &[Certificate]) -> Result<f64> {
    if certs.is_empty() {
        return Err(Error::Empty("certificates"));
    }
    Ok(certs.iter().map(|c| c.radius as f64).sum::<f64>() / certs.len() as f64)
}

/// Mean certified radius as a fraction of document length.
pub fn mcrr(certs: &[Certificate]) -> Result<f64> {
    if certs.is_empty() {
        return Err(Error::Empty("certificates"));
    }
    Ok(certs.iter().map(|c| c.r_rate).sum::<f64>() / certs.len() as f64)
}

const JSD_EPSILON: f64 = 1e-10;

fn histogram(samples: &[f64], bins: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; bins];
    for &v in samples {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParams(format!("sample {v} outside [0, 1]")));
        }
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1.0;
    }
    let total: f64 = counts.iter().map(|c| c + JSD_EPSILON).sum();
    Ok(counts.into_iter().map(|c| (c + JSD_EPSILON) / total).collect())
}

/// Jensen-Shannon divergence in nats between two samples on `[0, 1]`,
/// histogrammed into `bins` equal-width bins.
pub fn js_divergence(p: &[f64], q: &[f64], bins: usize) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if bins < 2 {
        return Err(Error::InvalidParams("need at least 2 bins".into()));
    }
    let p = histogram(p, bins)?;
    let q = histogram(q, bins)?;
    let jsd: f64 = p
        .iter()
        .zip(&q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * a * (a / m).ln() + 0.5 * b * (b / m).ln()
        })
        .sum();
    Ok(jsd.clamp(0.0, std::f64::consts::LN_2))
}
