//! The `maskcert` command line.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 data error,
//! 3 external scorer failure. Failures print one JSON object on stderr.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::attacks::{parse_precomputed, evaluate_defense, AttackBudget, AttackSpec};
use crate::certify::{beta_divergence_sweep, certify_candidates, BoundVariant, Certificate, CertifyConfig, SearchMode};
use crate::error::{Error, Result};
use crate::eval::{crq, mcr, mcrr, mrr_at_k, ndcg_at_k, Gain, RunList};
use crate::harness::bridge::{BridgeOptions, BridgeScorer, Endpoint};
use crate::harness::ingest::{self, candidate_sets, full_candidate_sets};
use crate::harness::report::{to_pretty_json, write_json, write_jsonl, write_text, Report};
use crate::sampling::{RngStream, Rounding};
use crate::scorer::{train_pairwise, HashedLinearScorer, LexicalScorer, Scorer, ScorerHandle, TrainConfig};
use crate::smoothing::{rank_documents, BaseRanker, CandidateSet, SmoothedRanker, SmoothingConfig, TiePolicy, EXACT_CAP, ExactSmoothedRanker, Ranker};
use crate::synth::{beta_fixture, generate, SynthConfig};
use crate::text::TokenSeq;

#[derive(Debug, Parser)]
#[command(name = "maskcert", version, about = "Certified robustness for text rankers via random masking")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the hashed linear pairwise scorer on triples.
    Train(TrainArgs),
    /// Rank candidates with the base and/or smoothed scorer.
    Rank(RankArgs),
    /// Certify top-K robustness for every query in a run.
    Certify(CertifyArgs),
    /// Attack base and smoothed rankers and report success rates.
    Attack(AttackArgs),
    /// Compare beta samples with plain smoothed samples across radii.
    ValidateBeta(ValidateBetaArgs),
    /// Compute MRR and NDCG for a run.
    Eval(EvalArgs),
    /// Write a seeded synthetic corpus, queries, base run and qrels.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Lexical,
    HashedLinear,
    Bridge,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScorerArgs {
    #[arg(long, value_enum, default_value_t = ScorerKind::Lexical)]
    pub scorer: ScorerKind,
    /// Weights file for the hashed linear scorer.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// `tcp://host:port` or `exec:command args`; MASKCERT_BRIDGE takes precedence.
    #[arg(long)]
    pub bridge: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    pub bridge_timeout_ms: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SmoothingArgs {
    #[arg(long, default_value_t = 0.3)]
    pub mask_ratio: f64,
    /// Masked copies per prediction.
    #[arg(long, default_value_t = 100)]
    pub n_predict: usize,
    /// Masked copies per certified score.
    #[arg(long, default_value_t = 1000)]
    pub n_certify: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_parser = parse_rounding, default_value = "half-up")]
    pub rounding: Rounding,
}

impl SmoothingArgs {
    fn config(&self) -> Result<SmoothingConfig> {
        let cfg = SmoothingConfig {
            mask_ratio: self.mask_ratio,
            n_predict: self.n_predict,
            n_certify: self.n_certify,
            seed: self.seed,
            tie_policy: TiePolicy::default(),
            rounding: self.rounding,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Training report (default: stdout).
    #[arg(long)]
    #[serde(skip)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub mask_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Do not add label-swapped copies of each triple.
    #[arg(long)]
    pub no_balance: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CandidateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// First-stage run supplying candidates; every corpus document otherwise.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Candidates kept per query from the run.
    #[arg(long)]
    pub depth: Option<usize>,
}

impl CandidateArgs {
    fn load(&self) -> Result<Vec<CandidateSet>> {
        let corpus = ingest::load_corpus(&self.corpus)?;
        let queries = ingest::load_queries(&self.queries)?;
        match &self.run {
            Some(path) => candidate_sets(&ingest::load_run(path)?, &corpus, &queries, self.depth),
            None => Ok(full_candidate_sets(&corpus, &queries)),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RankArgs {
    #[command(flatten)]
    pub candidates: CandidateArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out_base: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out_smoothed: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub candidates: CandidateArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Perturbation sets per beta estimate.
    #[arg(long, default_value_t = 100)]
    pub n_r: usize,
    /// Keep sets per perturbation set (default: n-certify).
    #[arg(long)]
    pub n_k: Option<usize>,
    #[arg(long, value_parser = parse_variant, default_value = "conservative")]
    pub variant: BoundVariant,
    #[arg(long, value_parser = parse_search, default_value = "linear")]
    pub search: SearchMode,
    /// Smallest radius that counts as certified in the summary.
    #[arg(long, default_value_t = 1)]
    pub min_radius: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out_certs: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out_summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    KeywordStuffing,
    Greedy,
    BruteForce,
    Precomputed,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackArgs {
    #[command(flatten)]
    pub candidates: CandidateArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[arg(long, value_enum, default_value_t = AttackKind::Greedy)]
    pub attack: AttackKind,
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    /// Comma-separated substitutes (default: every query token).
    #[arg(long)]
    pub vocab: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub max_fraction: f64,
    /// TSV of `query_id, doc_id, adversarial text`.
    #[arg(long)]
    pub precomputed: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Score the smoothed ranker by full enumeration.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateBetaArgs {
    /// Corpus and queries holding the document to analyse (default: built-in 30-token fixture).
    #[arg(long, requires_all = ["queries", "query_id", "doc_id"])]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub query_id: Option<String>,
    #[arg(long)]
    pub doc_id: Option<String>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    pub mask_ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub radius_fracs: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub n_r: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_k: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_parser = parse_rounding, default_value = "half-up")]
    pub rounding: Rounding,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_parser = parse_gain, default_value = "exponential")]
    pub gain: Gain,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub queries: usize,
    #[arg(long, default_value_t = 5)]
    pub docs_per_query: usize,
    #[arg(long, default_value_t = 6)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    pub query_len: usize,
    #[arg(long, default_value_t = 5)]
    pub min_doc_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_doc_len: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

fn parse_rounding(s: &str) -> std::result::Result<Rounding, String> {
    match s {
        "half-up" => Ok(Rounding::HalfUp),
        "floor" => Ok(Rounding::Floor),
        _ => Err(format!("expected half-up or floor, got `{s}`")),
    }
}

fn parse_variant(s: &str) -> std::result::Result<BoundVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_search(s: &str) -> std::result::Result<SearchMode, String> {
    match s {
        "linear" => Ok(SearchMode::Linear),
        "binary" => Ok(SearchMode::Binary),
        _ => Err(format!("expected linear or binary, got `{s}`")),
    }
}

fn parse_gain(s: &str) -> std::result::Result<Gain, String> {
    match s {
        "exponential" => Ok(Gain::Exponential),
        "linear" => Ok(Gain::Linear),
        _ => Err(format!("expected exponential or linear, got `{s}`")),
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_bridge_failure() {
        return 3;
    }
    match err {
        Error::InvalidParams(_) | Error::BudgetTooLarge(_) | Error::TooLarge { .. } => 1,
        _ => 2,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match exit_code(err) {
        1 => "validation",
        3 => "bridge",
        _ => "data",
    }
}

fn build_scorer(args: &ScorerArgs) -> Result<ScorerHandle> {
    match args.scorer {
        ScorerKind::Lexical => Ok(ScorerHandle::Lexical(LexicalScorer)),
        ScorerKind::HashedLinear => {
            let path = args
                .weights
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("--weights is required for the hashed-linear scorer".into()))?;
            Ok(ScorerHandle::HashedLinear(HashedLinearScorer::load(path)?))
        }
        ScorerKind::Bridge => {
            let spec = Endpoint::resolve(args.bridge.as_deref())
                .ok_or_else(|| Error::InvalidParams("bridge scorer needs --bridge or MASKCERT_BRIDGE".into()))?;
            let endpoint = Endpoint::parse(&spec).map_err(|e| Error::InvalidParams(e.to_string()))?;
            let options = BridgeOptions {
                timeout_ms: args.bridge_timeout_ms,
                max_connections: rayon::current_num_threads(),
                ..BridgeOptions::default()
            };
            Ok(ScorerHandle::Bridge(BridgeScorer::connect(endpoint, options)?))
        }
    }
}

/// Writes `text` to `path`, or to stdout without one.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("writing stdout", e))
        }
    }
}

fn train(args: &TrainArgs) -> Result<()> {
    let triples = ingest::load_triples(&args.triples)?;
    let cfg = TrainConfig {
        mask_ratio: args.mask_ratio,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        balance_labels: !args.no_balance,
    };
    cfg.validate()?;
    let (model, log) = train_pairwise(&triples, &cfg)?;
    model.save(&args.out)?;
    let report = Report::new("train", args, Some(args.seed), Some(model.identity()), log);
    emit(args.report.as_deref(), &to_pretty_json(&report)?)
}

fn rank(args: &RankArgs) -> Result<()> {
    if args.out_base.is_none() && args.out_smoothed.is_none() {
        return Err(Error::InvalidParams("give --out-base and/or --out-smoothed".into()));
    }
    let cfg = args.smoothing.config()?;
    let sets = args.candidates.load()?;
    let scorer = build_scorer(&args.scorer)?;
    if let Some(path) = &args.out_base {
        let ranker = BaseRanker { scorer: &scorer };
        write_text(path, &rank_all(&ranker, "base", &sets)?.to_trec())?;
    }
    if let Some(path) = &args.out_smoothed {
        let ranker = SmoothedRanker {
            scorer: &scorer,
            cfg: cfg.clone(),
            copies: cfg.n_predict,
            stream_label: "rank.g".into(),
        };
        write_text(path, &rank_all(&ranker, "smoothed", &sets)?.to_trec())?;
    }
    Ok(())
}

fn rank_all(ranker: &dyn Ranker, tag: &str, sets: &[CandidateSet]) -> Result<RunList> {
    let ranked = sets
        .par_iter()
        .map(|s| rank_documents(ranker, &s.query, &s.docs))
        .collect::<Result<Vec<_>>>()?;
    let mut run = RunList::new(tag);
    for (set, list) in sets.iter().zip(ranked) {
        run.insert(set.query_id.clone(), list)?;
    }
    Ok(run)
}

#[derive(Debug, Serialize)]
struct QuerySummary {
    query_id: String,
    radius: usize,
    r_rate: f64,
    certified: bool,
}

#[derive(Debug, Serialize)]
struct CertifySummary {
    queries: usize,
    skipped: Vec<String>,
    top_k: usize,
    min_radius: usize,
    variant: BoundVariant,
    certified: usize,
    crq: f64,
    mcr: f64,
    mcrr: f64,
    per_query: Vec<QuerySummary>,
}

fn certify(args: &CertifyArgs) -> Result<()> {
    let smoothing = args.smoothing.config()?;
    let cfg = CertifyConfig {
        n_r: args.n_r,
        n_k: args.n_k.unwrap_or(smoothing.n_certify),
        smoothing,
        variant: args.variant,
        search: args.search,
    };
    cfg.validate()?;
    if args.top_k == 0 {
        return Err(Error::InvalidParams("--top-k must be at least 1".into()));
    }
    let sets = args.candidates.load()?;
    let scorer = build_scorer(&args.scorer)?;
    let outcomes = sets
        .par_iter()
        .map(|set| match certify_candidates(&scorer, set, args.top_k, &cfg) {
            Ok(c) => Ok(Some(c)),
            Err(Error::ShortRanking { len, .. }) => {
                warn!("query {} has {len} candidates, skipped", set.query_id);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = sets
        .iter()
        .zip(&outcomes)
        .filter(|(_, c)| c.is_none())
        .map(|(s, _)| s.query_id.clone())
        .collect();
    let certs: Vec<Certificate> = outcomes.into_iter().flatten().collect();
    if certs.is_empty() {
        return Err(Error::Empty("no query has enough candidates to certify"));
    }
    if let Some(path) = &args.out_certs {
        write_jsonl(path, &certs)?;
    }
    let summary = CertifySummary {
        queries: certs.len(),
        skipped,
        top_k: args.top_k,
        min_radius: args.min_radius,
        variant: args.variant,
        certified: certs.iter().filter(|c| c.radius >= args.min_radius).count(),
        crq: crq(&certs, args.min_radius)?,
        mcr: mcr(&certs)?,
        mcrr: mcrr(&certs)?,
        per_query: certs
            .iter()
            .map(|c| QuerySummary {
                query_id: c.query_id.clone(),
                radius: c.radius,
                r_rate: c.r_rate,
                certified: c.radius >= args.min_radius,
            })
            .collect(),
    };
    let report = Report::new("certify", args, Some(args.smoothing.seed), Some(scorer.identity()), summary);
    emit(args.out_summary.as_deref(), &to_pretty_json(&report)?)
}

fn attack(args: &AttackArgs) -> Result<()> {
    let cfg = args.smoothing.config()?;
    let sets = args.candidates.load()?;
    let vocab: Vec<String> = match &args.vocab {
        Some(list) => list.split(',').map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect(),
        None => sets
            .iter()
            .flat_map(|s| s.query.tokens().iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let spec = match args.attack {
        AttackKind::KeywordStuffing => AttackSpec::KeywordStuffing {
            fraction: args.fraction,
            max_fraction: args.max_fraction,
        },
        AttackKind::Greedy => AttackSpec::Greedy {
            budget: AttackBudget::new(args.radius, vocab)?,
        },
        AttackKind::BruteForce => AttackSpec::BruteForce {
            budget: AttackBudget::new(args.radius, vocab)?,
        },
        AttackKind::Precomputed => {
            let path = args
                .precomputed
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("--precomputed is required for this attack".into()))?;
            AttackSpec::Precomputed {
                docs: parse_precomputed(&ingest::read_text(path)?)?,
            }
        }
    };
    let scorer = build_scorer(&args.scorer)?;
    let base = BaseRanker { scorer: &scorer };
    let report = if args.exact {
        let smoothed = ExactSmoothedRanker {
            scorer: &scorer,
            mask_ratio: cfg.mask_ratio,
            rounding: cfg.rounding,
            cap: EXACT_CAP,
        };
        evaluate_defense(&base, &smoothed, &spec, &sets, args.top_k)?
    } else {
        let smoothed = SmoothedRanker {
            scorer: &scorer,
            cfg: cfg.clone(),
            copies: cfg.n_predict,
            stream_label: "attack.g".into(),
        };
        evaluate_defense(&base, &smoothed, &spec, &sets, args.top_k)?
    };
    let report = Report::new("attack", args, Some(cfg.seed), Some(scorer.identity()), report);
    emit(args.out.as_deref(), &to_pretty_json(&report)?)
}

fn validate_beta(args: &ValidateBetaArgs) -> Result<()> {
    let (query, doc): (TokenSeq, TokenSeq) = match (&args.corpus, &args.queries, &args.query_id, &args.doc_id) {
        (Some(corpus), Some(queries), Some(qid), Some(did)) => {
            let corpus = ingest::load_corpus(corpus)?;
            let queries = ingest::load_queries(queries)?;
            let query = queries
                .into_iter()
                .find(|(id, _)| id == qid)
                .map(|(_, q)| q)
                .ok_or_else(|| Error::UnknownId { kind: "query", id: qid.clone() })?;
            (query, corpus.get(did)?.clone())
        }
        _ => beta_fixture(),
    };
    for &ratio in &args.mask_ratios {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidParams(format!("mask ratio {ratio} outside [0, 1)")));
        }
    }
    let scorer = build_scorer(&args.scorer)?;
    let mut rows = Vec::new();
    for &ratio in &args.mask_ratios {
        let mut rng = RngStream::named(args.seed, &format!("validate-beta.rho{ratio}"));
        rows.extend(beta_divergence_sweep(
            &scorer,
            &query,
            &doc,
            ratio,
            args.rounding,
            &args.radius_fracs,
            args.n_r,
            args.n_k,
            args.bins,
            &mut rng,
        )?);
    }
    let report = Report::new(
        "validate-beta",
        args,
        Some(args.seed),
        Some(scorer.identity()),
        json!({ "doc_len": doc.len(), "rows": rows }),
    );
    emit(args.out.as_deref(), &to_pretty_json(&report)?)
}

fn eval(args: &EvalArgs) -> Result<()> {
    let run = ingest::load_run(&args.run)?;
    let qrels = ingest::load_qrels(&args.qrels)?;
    let results = json!({
        "queries": run.queries.len(),
        "k": args.k,
        "mrr": mrr_at_k(&run, &qrels, args.k)?,
        "ndcg": ndcg_at_k(&run, &qrels, args.k, args.gain)?,
    });
    let report = Report::new("eval", args, None, None, results);
    emit(args.out.as_deref(), &to_pretty_json(&report)?)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        queries: args.queries,
        docs_per_query: args.docs_per_query,
        vocab_size: args.vocab_size,
        query_len: args.query_len,
        min_doc_len: args.min_doc_len,
        max_doc_len: args.max_doc_len,
        seed: args.seed,
    };
    if cfg.vocab_size == 0 || cfg.vocab_size > 48 || cfg.min_doc_len == 0 || cfg.min_doc_len > cfg.max_doc_len {
        return Err(Error::InvalidParams("synthetic corpus parameters out of range".into()));
    }
    let corpus = generate(&cfg);
    let mut docs = String::new();
    let mut queries = String::new();
    let mut qrels = String::new();
    let mut run = RunList::new("base");
    for q in &corpus.queries {
        queries.push_str(&format!("{}\t{}\n", q.id, q.tokens));
        let mut candidates = Vec::new();
        for d in &q.docs {
            docs.push_str(&serde_json::to_string(&json!({ "doc_id": d.id, "text": d.tokens.to_string() }))?);
            docs.push('\n');
            qrels.push_str(&format!("{} 0 {} {}\n", q.id, d.id, corpus.label(q, d)));
            candidates.push((d.id.clone(), d.tokens.clone()));
        }
        run.insert(q.id.clone(), rank_documents(&BaseRanker { scorer: &LexicalScorer }, &q.tokens, &candidates)?)?;
    }
    write_text(&args.out_dir.join("corpus.jsonl"), &docs)?;
    write_text(&args.out_dir.join("queries.tsv"), &queries)?;
    write_text(&args.out_dir.join("qrels.txt"), &qrels)?;
    write_text(&args.out_dir.join("run.trec"), &run.to_trec())?;
    write_json(&args.out_dir.join("synth.json"), &Report::new("synth", args, Some(args.seed), None, &cfg))
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::InvalidParams("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
    }
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Rank(a) => rank(a),
        Command::Certify(a) => certify(a),
        Command::Attack(a) => attack(a),
        Command::ValidateBeta(a) => validate_beta(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    }
}

fn report_error(kind: &str, message: &str) {
    let line = json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim());
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(error_kind(&e), &e.to_string());
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::BridgeError;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidParams("x".into())), 1);
        assert_eq!(exit_code(&Error::Parse { line: 1, message: "x".into() }), 2);
        assert_eq!(exit_code(&Error::SentinelCollision { line: 3 }), 2);
        assert_eq!(exit_code(&Error::Bridge(BridgeError::Malformed("x".into()))), 3);
        let nested = Error::ScoringFailed {
            completed: 0,
            total: 4,
            source: Box::new(Error::Bridge(BridgeError::Timeout { id: 1, millis: 5 })),
        };
        assert_eq!(exit_code(&nested), 3);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["maskcert", "nonsense"]), 1);
        assert_eq!(run(["maskcert", "certify", "--corpus", "c", "--queries", "q", "--variant", "bogus"]), 1);
    }

    #[test]
    fn config_echo_omits_outputs() {
        let cli = Cli::try_parse_from(["maskcert", "eval", "--run", "r", "--qrels", "q", "--out", "o"]).unwrap();
        let Command::Eval(args) = cli.command else { panic!() };
        let echo = serde_json::to_value(&args).unwrap();
        assert!(echo.get("out").is_none());
        assert_eq!(echo["k"], 10);
    }
}
