//! Readers for corpora, queries, training triples, runs and qrels.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use log::warn;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{Qrels, RunList};
use crate::scorer::Triplet;
use crate::smoothing::CandidateSet;
use crate::text::{tokenize, TokenSeq, MASK_TOKEN};

/// Documents longer than this are cut.
pub const MAX_DOC_TOKENS: usize = 256;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_text(text: &str, line: usize) -> Result<TokenSeq> {
    let tokens = tokenize(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    if tokens.tokens().iter().any(|t| t.eq_ignore_ascii_case(MASK_TOKEN)) {
        return Err(Error::SentinelCollision { line });
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub docs: BTreeMap<String, TokenSeq>,
    /// Ids of documents that were truncated.
    pub truncated: Vec<String>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Result<&TokenSeq> {
        self.docs.get(id).ok_or_else(|| Error::UnknownId {
            kind: "document",
            id: id.to_string(),
        })
    }
}

#[derive(Deserialize)]
struct CorpusLine {
    doc_id: String,
    text: String,
}

/// Parses JSONL lines `{"doc_id": ..., "text": ...}`.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: CorpusLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut tokens = parse_text(&row.text, line_no)?;
        if tokens.truncate(MAX_DOC_TOKENS) {
            warn!("document {} truncated to {MAX_DOC_TOKENS} tokens", row.doc_id);
            corpus.truncated.push(row.doc_id.clone());
        }
        if corpus.docs.insert(row.doc_id.clone(), tokens).is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate doc_id {}", row.doc_id),
            });
        }
    }
    Ok(corpus)
}

/// Parses `qid \t text` lines, preserving file order.
pub fn parse_queries(text: &str) -> Result<Vec<(String, TokenSeq)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected `qid<TAB>text`".into(),
        })?;
        let qid = qid.trim().to_string();
        if !seen.insert(qid.clone()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate query id {qid}"),
            });
        }
        out.push((qid, parse_text(body, line_no)?));
    }
    Ok(out)
}

/// Parses `query \t positive \t negative` lines.
pub fn parse_triples(text: &str) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [query, positive, negative] = cols.as_slice() else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        };
        let mut positive = parse_text(positive, line_no)?;
        let mut negative = parse_text(negative, line_no)?;
        positive.truncate(MAX_DOC_TOKENS);
        negative.truncate(MAX_DOC_TOKENS);
        out.push(Triplet {
            query: parse_text(query, line_no)?,
            positive,
            negative,
        });
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(&read_text(path)?)
}

pub fn load_queries(path: &Path) -> Result<Vec<(String, TokenSeq)>> {
    parse_queries(&read_text(path)?)
}

pub fn load_triples(path: &Path) -> Result<Vec<Triplet>> {
    parse_triples(&read_text(path)?)
}

pub fn load_run(path: &Path) -> Result<RunList> {
    RunList::parse_trec(&read_text(path)?)
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    Qrels::parse_trec(&read_text(path)?)
}

/// Joins a run with its corpus and queries, keeping the run's order and
/// at most `depth` candidates per query.
pub fn candidate_sets(
    run: &RunList,
    corpus: &Corpus,
    queries: &[(String, TokenSeq)],
    depth: Option<usize>,
) -> Result<Vec<CandidateSet>> {
    let by_id: BTreeMap<&str, &TokenSeq> = queries.iter().map(|(id, q)| (id.as_str(), q)).collect();
    run.queries
        .iter()
        .map(|(qid, ranked)| {
            let query = by_id.get(qid.as_str()).ok_or_else(|| Error::UnknownId {
                kind: "query",
                id: qid.clone(),
            })?;
            let docs = ranked
                .iter()
                .take(depth.unwrap_or(usize::MAX))
                .map(|(id, _)| Ok((id.clone(), corpus.get(id)?.clone())))
                .collect::<Result<Vec<_>>>()?;
            Ok(CandidateSet {
                query_id: qid.clone(),
                query: (*query).clone(),
                docs,
            })
        })
        .collect()
}

/// Every corpus document as a candidate for every query, for ranking
/// without a first-stage run.
pub fn full_candidate_sets(corpus: &Corpus, queries: &[(String, TokenSeq)]) -> Vec<CandidateSet> {
    queries
        .iter()
        .map(|(qid, query)| CandidateSet {
            query_id: qid.clone(),
            query: query.clone(),
            docs: corpus.docs.iter().map(|(id, d)| (id.clone(), d.clone())).collect(),
        })
        .collect()
}
