//! Seeded synthetic corpora for desk-scale experiments and fixtures.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::RngStream;
use crate::scorer::{LexicalScorer, Triplet};
use crate::text::TokenSeq;

const WORDS: [&str; 48] = [
    "amber", "basin", "cedar", "delta", "ember", "fjord", "grove", "heath", "inlet", "jetty",
    "knoll", "lagoon", "marsh", "north", "orchard", "prairie", "quarry", "ridge", "summit",
    "tundra", "upland", "valley", "willow", "yarrow", "zephyr", "anchor", "beacon", "canyon",
    "dune", "estuary", "forest", "glacier", "harbor", "island", "jungle", "kelp", "lake",
    "meadow", "nook", "oasis", "pond", "reef", "shore", "tide", "vale", "wharf", "brook",
    "cliff",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub queries: usize,
    pub docs_per_query: usize,
    pub vocab_size: usize,
    pub query_len: usize,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            queries: 20,
            docs_per_query: 5,
            vocab_size: 6,
            query_len: 2,
            min_doc_len: 5,
            max_doc_len: 8,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDoc {
    pub id: String,
    pub tokens: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthQuery {
    pub id: String,
    pub tokens: TokenSeq,
    pub docs: Vec<SynthDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub vocab: Vec<String>,
    pub queries: Vec<SynthQuery>,
}

impl SynthCorpus {
    /// Graded label per document: its query overlap, capped at 3.
    pub fn label(&self, query: &SynthQuery, doc: &SynthDoc) -> u8 {
        LexicalScorer::overlap(query.tokens.tokens(), doc.tokens.tokens()).min(3) as u8
    }
}

/// Builds a corpus where each document draws every token from the query
/// with a document-specific probability and from the vocabulary otherwise,
/// so candidate lists have a spread of relevance.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    assert!(cfg.vocab_size >= 1 && cfg.vocab_size <= WORDS.len());
    assert!(cfg.min_doc_len >= 1 && cfg.min_doc_len <= cfg.max_doc_len);
    let vocab: Vec<String> = WORDS[..cfg.vocab_size].iter().map(|w| w.to_string()).collect();
    let mut rng = RngStream::named(cfg.seed, "synth.corpus");
    let mut queries = Vec::with_capacity(cfg.queries);
    for qi in 0..cfg.queries {
        let query: Vec<String> = vocab
            .choose_multiple(&mut rng, cfg.query_len.min(vocab.len()))
            .cloned()
            .collect();
        let mut docs = Vec::with_capacity(cfg.docs_per_query);
        for di in 0..cfg.docs_per_query {
            let len = rng.gen_range(cfg.min_doc_len..=cfg.max_doc_len);
            let from_query: f64 = rng.gen_range(0.0..0.5);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(from_query) {
                        query.choose(&mut rng).unwrap().clone()
                    } else {
                        vocab.choose(&mut rng).unwrap().clone()
                    }
                })
                .collect();
            docs.push(SynthDoc {
                id: format!("q{qi}d{di}"),
                tokens: TokenSeq::from_tokens(tokens).unwrap(),
            });
        }
        queries.push(SynthQuery {
            id: format!("q{qi}"),
            tokens: TokenSeq::from_tokens(query).unwrap(),
            docs,
        });
    }
    SynthCorpus { vocab, queries }
}

/// Triplets whose positive document contains both query words and whose
/// negative document contains neither; linearly separable by construction.
pub fn separable_triplets(count: usize, seed: u64) -> Vec<Triplet> {
    let mut rng = RngStream::named(seed, "synth.triplets");
    let topics = &WORDS[..8];
    let filler = &WORDS[8..24];
    (0..count)
        .map(|_| {
            let query: Vec<String> = topics.choose_multiple(&mut rng, 2).map(|w| w.to_string()).collect();
            let mut positive = query.clone();
            positive.extend(filler.choose_multiple(&mut rng, 4).map(|w| w.to_string()));
            positive.shuffle(&mut rng);
            let negative: Vec<String> = filler.choose_multiple(&mut rng, 6).map(|w| w.to_string()).collect();
            Triplet {
                query: TokenSeq::from_tokens(query).unwrap(),
                positive: TokenSeq::from_tokens(positive).unwrap(),
                negative: TokenSeq::from_tokens(negative).unwrap(),
            }
        })
        .collect()
}

/// A four-word query and a 30-token document holding each query word
/// several times among filler, used for the beta validation sweep.
pub fn beta_fixture() -> (TokenSeq, TokenSeq) {
    let query = TokenSeq::from_tokens(WORDS[..4].iter().copied()).unwrap();
    let doc = TokenSeq::from_tokens((0..30).map(|i| WORDS[(i * 7) % 12])).unwrap();
    (query, doc)
}
