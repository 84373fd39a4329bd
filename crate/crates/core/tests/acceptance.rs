use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use maskcert::attacks::{brute_force_counterexample, evaluate_defense, AttackBudget, AttackSpec};
use maskcert::certify::{
    beta_divergence_sweep, certify_candidates, delta, delta_exact, BoundVariant, Certificate, CertifyConfig, SearchMode,
};
use maskcert::error::Error;
use maskcert::eval::{crq, mcr, mcrr, mrr_at_k, ndcg_at_k, Gain, Qrels, RunList};
use maskcert::sampling::{enumerate_keep_sets, RngStream, Rounding, SubsetDistribution};
use maskcert::scorer::{pairwise_loss, LexicalScorer};
use maskcert::smoothing::{
    exact_smoothed_score, smoothed_score_n, BaseRanker, CandidateSet, ExactSmoothedRanker, Ranker, SmoothedRanker,
    SmoothingConfig, EXACT_CAP,
};
use maskcert::synth::{beta_fixture, generate, SynthConfig};
use maskcert::text::TokenSeq;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: u32, pass: bool, elapsed: Duration, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    writeln!(
        std::io::stdout().lock(),
        "{status} criterion {criterion}: {detail} ({:.2}s)",
        elapsed.as_secs_f64()
    )
    .unwrap();
    assert!(pass, "criterion {criterion}: {detail}");
}

fn candidate_sets(cfg: &SynthConfig) -> (Vec<CandidateSet>, Vec<String>) {
    let corpus = generate(cfg);
    let sets = corpus
        .queries
        .into_iter()
        .map(|q| CandidateSet {
            query_id: q.id,
            query: q.tokens,
            docs: q.docs.into_iter().map(|d| (d.id, d.tokens)).collect(),
        })
        .collect();
    (sets, corpus.vocab)
}

#[test]
fn c1_delta_matches_enumeration() {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for len in 1..=10 {
        for keep in 0..=len {
            let keeps: Vec<_> = enumerate_keep_sets(SubsetDistribution { len, keep }, EXACT_CAP).unwrap().collect();
            for radius in 0..=len {
                // the fixed perturbed set is {1, ..., radius}
                let hits = keeps.iter().filter(|h| h.as_slice().first().is_some_and(|&p| p <= radius)).count();
                let counted = Ratio::new(hits as u128, keeps.len() as u128);
                let exact = delta_exact(len, keep, radius).unwrap();
                let float = delta(len, keep, radius);
                let counted_f = hits as f64 / keeps.len() as f64;
                if exact != counted || (float - counted_f).abs() > 1e-12 {
                    mismatches.push((len, keep, radius));
                }
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(5);
    verdict(1, pass, elapsed, &format!("{cases} (T, k, R) cases, mismatches {mismatches:?}"));
}

#[test]
fn c2_monte_carlo_tracks_exact() {
    const WORDS: [&str; 6] = ["amber", "basin", "cedar", "delta", "ember", "fjord"];
    const RATIOS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let len = rng.gen_range(1..=10);
        let qlen = rng.gen_range(1..=3);
        let query = TokenSeq::from_tokens(WORDS.choose_multiple(&mut rng, qlen).copied()).unwrap();
        let doc = TokenSeq::from_tokens((0..len).map(|_| *WORDS.choose(&mut rng).unwrap())).unwrap();
        let cfg = SmoothingConfig {
            mask_ratio: *RATIOS.choose(&mut rng).unwrap(),
            seed: 42,
            ..SmoothingConfig::default()
        };
        let mut stream = RngStream::named(cfg.seed, &format!("acceptance.mc.{i}"));
        let mc = smoothed_score_n(&LexicalScorer, &query, &doc, &cfg, 20_000, &mut stream).unwrap().mean;
        let exact = exact_smoothed_score(&LexicalScorer, &query, &doc, cfg.mask_ratio, cfg.rounding, EXACT_CAP)
            .unwrap()
            .mean;
        let err = (mc - exact).abs();
        worst = worst.max(err);
        if err <= 0.02 {
            within += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = within >= 49 && elapsed < Duration::from_secs(60);
    verdict(2, pass, elapsed, &format!("{within}/50 fixtures within 0.02, worst error {worst:.5}"));
}

struct SoundnessSetup {
    sets: Vec<CandidateSet>,
    vocab: Vec<String>,
    certs: Vec<(BoundVariant, Vec<Certificate>)>,
    elapsed: Duration,
}

fn soundness_setup() -> &'static SoundnessSetup {
    static SETUP: OnceLock<SoundnessSetup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let start = Instant::now();
        let (sets, vocab) = candidate_sets(&SynthConfig::default());
        let certs = BoundVariant::ALL
            .into_iter()
            .map(|variant| {
                let cfg = CertifyConfig {
                    smoothing: SmoothingConfig {
                        mask_ratio: 0.5,
                        n_certify: 1000,
                        seed: 42,
                        ..SmoothingConfig::default()
                    },
                    n_r: 100,
                    n_k: 1000,
                    variant,
                    search: SearchMode::Linear,
                };
                let certs = sets
                    .iter()
                    .map(|s| certify_candidates(&LexicalScorer, s, 1, &cfg).unwrap())
                    .collect();
                (variant, certs)
            })
            .collect();
        SoundnessSetup {
            sets,
            vocab,
            certs,
            elapsed: start.elapsed(),
        }
    })
}

fn certs_for(setup: &SoundnessSetup, variant: BoundVariant) -> &[Certificate] {
    &setup.certs.iter().find(|(v, _)| *v == variant).unwrap().1
}

struct Violation {
    query_id: String,
    doc_id: String,
    radius: usize,
    at_boundary: bool,
}

/// Searches every document outside the top K for a perturbation of at most
/// `radius` tokens whose exact smoothed score beats that of the K-th document.
fn find_violations(
    exact: &ExactSmoothedRanker,
    set: &CandidateSet,
    cert: &Certificate,
    radius: usize,
    vocab: &[String],
) -> Result<Vec<Violation>, Error> {
    let (_, doc_k) = set.docs.iter().find(|(id, _)| *id == cert.doc_k).unwrap();
    let target = exact.rank_score(&set.query, doc_k)?;
    let mut found = Vec::new();
    for (id, doc) in set.docs.iter().filter(|(id, _)| *id != cert.doc_k) {
        let budget = AttackBudget::new(radius.min(doc.len()), vocab.to_vec())?;
        let already_above = exact.rank_score(&set.query, doc)? > target;
        if already_above || brute_force_counterexample(exact, &set.query, doc, &budget, target)?.is_some() {
            found.push(Violation {
                query_id: set.query_id.clone(),
                doc_id: id.clone(),
                radius,
                at_boundary: *id == cert.doc_k1,
            });
        }
    }
    Ok(found)
}

fn exact_ranker() -> ExactSmoothedRanker<'static> {
    ExactSmoothedRanker {
        scorer: &LexicalScorer,
        mask_ratio: 0.5,
        rounding: Rounding::HalfUp,
        cap: EXACT_CAP,
    }
}

#[test]
fn c3_conservative_certificates_survive_brute_force() {
    let setup = soundness_setup();
    let start = Instant::now();
    let exact = exact_ranker();
    let certs = certs_for(setup, BoundVariant::Conservative);
    let mut violations = Vec::new();
    let mut checked = 0;
    for (set, cert) in setup.sets.iter().zip(certs) {
        if cert.radius == 0 {
            continue;
        }
        checked += 1;
        violations.extend(find_violations(&exact, set, cert, cert.radius, &setup.vocab).unwrap());
    }
    let elapsed = setup.elapsed + start.elapsed();
    let boundary = violations.iter().filter(|v| v.at_boundary).count();
    let listed: Vec<String> = violations
        .iter()
        .map(|v| format!("{}:{}@R={}", v.query_id, v.doc_id, v.radius))
        .collect();
    let pass = violations.is_empty() && elapsed < Duration::from_secs(600);
    verdict(
        3,
        pass,
        elapsed,
        &format!(
            "{checked} certified queries attacked, {} violations ({boundary} at rank K+1) {listed:?}",
            violations.len()
        ),
    );
}

#[test]
fn c4_variant_radii_are_ordered() {
    let setup = soundness_setup();
    let start = Instant::now();
    let paper = certs_for(setup, BoundVariant::Paper);
    let conservative = certs_for(setup, BoundVariant::Conservative);
    let beta_one = certs_for(setup, BoundVariant::BetaOne);
    let disordered: Vec<&str> = paper
        .iter()
        .zip(conservative)
        .zip(beta_one)
        .filter(|((p, c), b)| !(p.radius >= c.radius && c.radius >= b.radius))
        .map(|((p, _), _)| p.query_id.as_str())
        .collect();

    // informative only: counterexamples at the first radius the paper variant
    // certifies beyond the conservative one
    let exact = exact_ranker();
    let mut beyond = 0;
    let mut falsified = Vec::new();
    for ((set, p), c) in setup.sets.iter().zip(paper).zip(conservative) {
        if p.radius <= c.radius {
            continue;
        }
        beyond += 1;
        if !find_violations(&exact, set, p, c.radius + 1, &setup.vocab).unwrap().is_empty() {
            falsified.push(format!("{}@R={}", set.query_id, c.radius + 1));
        }
    }
    let mean = |certs: &[Certificate]| certs.iter().map(|c| c.radius as f64).sum::<f64>() / certs.len() as f64;
    let elapsed = start.elapsed();
    verdict(
        4,
        disordered.is_empty(),
        elapsed,
        &format!(
            "mean radius paper {:.2} >= conservative {:.2} >= beta-one {:.2}, disordered {disordered:?}; \
             paper variant certifies {beyond} queries further, falsified {} of them {falsified:?}",
            mean(paper),
            mean(conservative),
            mean(beta_one),
            falsified.len()
        ),
    );
}

#[test]
fn c5_loss_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s_i = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let s_j = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let y = if rng.gen_bool(0.5) { [0.0, 1.0] } else { [1.0, 0.0] };
        let analytic = pairwise_loss(s_i, s_j, y);
        let mut inputs = [s_i[0], s_i[1], s_j[0], s_j[1]];
        let grads = [analytic.grad_i[0], analytic.grad_i[1], analytic.grad_j[0], analytic.grad_j[1]];
        for (c, &a) in grads.iter().enumerate() {
            let base = inputs[c];
            let loss = |v: &[f64; 4]| pairwise_loss([v[0], v[1]], [v[2], v[3]], y).loss;
            inputs[c] = base + h;
            let up = loss(&inputs);
            inputs[c] = base - h;
            let down = loss(&inputs);
            inputs[c] = base;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-5 && elapsed < Duration::from_secs(1);
    verdict(5, pass, elapsed, &format!("max relative error {worst:.3e} over 100 inputs"));
}

#[test]
fn c6_beta_distribution_converges_to_smoothed() {
    let start = Instant::now();
    let (query, doc) = beta_fixture();
    let fracs = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let mut failures = Vec::new();
    let mut table = Vec::new();
    for rho in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let mut rng = RngStream::named(42, &format!("validate-beta.rho{rho}"));
        let rows =
            beta_divergence_sweep(&LexicalScorer, &query, &doc, rho, Rounding::HalfUp, &fracs, 500, 1000, 50, &mut rng)
                .unwrap();
        let jsd: Vec<f64> = rows.iter().map(|r| r.jsd.unwrap_or(f64::INFINITY)).collect();
        let inversions: Vec<f64> = jsd.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
        let monotone = inversions.len() <= 1 && inversions.iter().all(|d| *d <= 2e-3);
        let small = rows.iter().zip(&jsd).filter(|(r, _)| r.radius_frac >= 0.5).all(|(_, j)| *j <= 1e-2);
        if !(monotone && small) {
            failures.push(rho);
        }
        table.push(format!("rho={rho}: {}", jsd.iter().map(|j| format!("{j:.1e}")).collect::<Vec<_>>().join(" ")));
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(300);
    verdict(6, pass, elapsed, &format!("failing rho {failures:?}; JSD by r/T {}", table.join("; ")));
}

fn cert(radius: usize, len: usize, top_k: usize) -> Certificate {
    Certificate {
        query_id: format!("q{radius}"),
        top_k,
        doc_k: "a".into(),
        doc_k1: "b".into(),
        doc_len: len,
        keep_count: len / 2,
        radius,
        r_rate: radius as f64 / len as f64,
        variant: BoundVariant::Conservative,
        g_k: 0.5,
        g_k1: 0.4,
        margin: 0.1,
        holds_at_radius: true,
        certified: radius >= 1,
        trace: Vec::new(),
        seed: 42,
        mask_ratio: 0.5,
        n_certify: 1000,
        n_r: 100,
        n_k: 1000,
    }
}

#[test]
fn c7_metric_fixtures() {
    let start = Instant::now();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/eval3");
    let run = RunList::parse_trec(&std::fs::read_to_string(dir.join("run.trec")).unwrap()).unwrap();
    let qrels = Qrels::parse_trec(&std::fs::read_to_string(dir.join("qrels.txt")).unwrap()).unwrap();
    let mrr = mrr_at_k(&run, &qrels, 10).unwrap();

    let mut single = RunList::new("base");
    single.insert("q", vec![("d1".into(), 3.0), ("d2".into(), 2.0), ("d3".into(), 1.0)]).unwrap();
    let mut labels = Qrels::default();
    for (doc, label) in [("d1", 0), ("d2", 3), ("d3", 1)] {
        labels.insert("q", doc, label).unwrap();
    }
    let ndcg = ndcg_at_k(&single, &labels, 3, Gain::Exponential).unwrap();

    let crq_fixture: Vec<Certificate> = [0, 1, 3, 0].into_iter().map(|r| cert(r, 8, 1)).collect();
    let crq_value = crq(&crq_fixture, 1).unwrap();
    let radius_fixture = [cert(2, 10, 1), cert(4, 20, 1)];
    let (mcr_value, mcrr_value) = (mcr(&radius_fixture).unwrap(), mcrr(&radius_fixture).unwrap());
    let mixed = matches!(crq(&[cert(1, 8, 1), cert(1, 8, 2)], 1), Err(Error::MixedK(1, 2)));

    let elapsed = start.elapsed();
    let pass = mrr == 0.5
        && (ndcg - 0.6443).abs() <= 1e-4
        && crq_value == 0.5
        && mcr_value == 3.0
        && mcrr_value == 0.2
        && mixed;
    verdict(
        7,
        pass,
        elapsed,
        &format!("MRR@10 {mrr}, NDCG@3 {ndcg:.5}, CRQ {crq_value}, MCR {mcr_value}, MCRR {mcrr_value}, MixedK rejected {mixed}"),
    );
}

#[test]
fn c8_smoothing_lowers_greedy_attack_success() {
    let start = Instant::now();
    let mut held = 0;
    let mut rates = Vec::new();
    for seed in 1..=5 {
        let (sets, vocab) = candidate_sets(&SynthConfig { seed, ..SynthConfig::default() });
        let base = BaseRanker { scorer: &LexicalScorer };
        let cfg = SmoothingConfig {
            mask_ratio: 0.5,
            n_predict: 1000,
            seed: 42,
            ..SmoothingConfig::default()
        };
        let smoothed = SmoothedRanker {
            scorer: &LexicalScorer,
            copies: cfg.n_predict,
            cfg,
            stream_label: "attack.g".into(),
        };
        let spec = AttackSpec::Greedy { budget: AttackBudget::new(2, vocab).unwrap() };
        let report = evaluate_defense(&base, &smoothed, &spec, &sets, 1).unwrap();
        if report.smoothed.asr <= report.base.asr {
            held += 1;
        }
        rates.push(format!("seed {seed}: base {:.0}% smoothed {:.0}%", report.base.asr, report.smoothed.asr));
    }
    let elapsed = start.elapsed();
    verdict(8, held >= 4, elapsed, &format!("{held}/5 seeds with smoothed ASR <= base ASR; {}", rates.join(", ")));
}

#[test]
fn c9_certify_output_is_independent_of_workers() {
    let start = Instant::now();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synth20");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "4", "1"].into_iter().enumerate() {
        let summary = dir.path().join(format!("summary{i}.json"));
        let certs = dir.path().join(format!("certs{i}.jsonl"));
        let status = Command::new(env!("CARGO_BIN_EXE_maskcert"))
            .arg("--workers")
            .arg(workers)
            .arg("certify")
            .arg("--corpus")
            .arg(fixture.join("corpus.jsonl"))
            .arg("--queries")
            .arg(fixture.join("queries.tsv"))
            .arg("--run")
            .arg(fixture.join("run.trec"))
            .args(["--top-k", "1", "--mask-ratio", "0.5", "--seed", "42"])
            .arg("--out-summary")
            .arg(&summary)
            .arg("--out-certs")
            .arg(&certs)
            .env_remove("MASKCERT_BRIDGE")
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push((std::fs::read(&summary).unwrap(), std::fs::read(&certs).unwrap()));
    }
    let elapsed = start.elapsed();
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        9,
        identical,
        elapsed,
        &format!("3 runs with workers 1, 4, 1 byte-identical: {identical} ({} summary bytes)", outputs[0].0.len()),
    );
}
