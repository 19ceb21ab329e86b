//! Acceptance suite: one test per shipping criterion, each printing a
//! pass line with its measured cost. Budgets are asserted, not advisory.

mod common;

use kernforge::harness::max_repeated_window;
use kernforge::harness::SplitMix64;
use kernforge::*;
use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::OnceLock;
use std::time::Instant;

type CompletionCache = HashMap<DecodeState, bool>;

fn corpus_raw() -> &'static Vec<String> {
    static CORPUS: OnceLock<Vec<String>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let mut files = common::corpus(1000);
        for entry in sample_files() {
            files.push(entry.1.to_string());
        }
        files
    })
}

fn corpus_normalized() -> &'static Vec<String> {
    static NORMALIZED: OnceLock<Vec<String>> = OnceLock::new();
    NORMALIZED.get_or_init(|| {
        corpus_raw()
            .iter()
            .filter(|f| filter_file(f.as_bytes()).accepted())
            .map(|f| {
                let doc = parse_document(f, "corpus").expect("accepted file parses");
                normalize_document(&doc)
                    .expect("accepted file normalizes")
                    .0
                    .serialize()
            })
            .collect()
    })
}

fn trained_vocab() -> &'static BpeVocab {
    static VOCAB: OnceLock<BpeVocab> = OnceLock::new();
    VOCAB.get_or_init(|| BpeVocab::train(corpus_normalized(), 3000).expect("trainable corpus"))
}

fn full_engine() -> &'static ConstraintEngine {
    static ENGINE: OnceLock<ConstraintEngine> = OnceLock::new();
    ENGINE.get_or_init(|| ConstraintEngine::new(trained_vocab()))
}

fn sample_files() -> Vec<(&'static str, &'static str)> {
    vec![
        ("two_voice.krn", include_str!("data/two_voice.krn")),
        ("chords.krn", include_str!("data/chords.krn")),
        ("split_voices.krn", include_str!("data/split_voices.krn")),
        ("with_text.krn", include_str!("data/with_text.krn")),
        ("anacrusis.krn", include_str!("data/anacrusis.krn")),
    ]
}

fn pass(name: &str, detail: String, started: Instant) {
    println!(
        "ACCEPTANCE {name}: PASS ({detail}, {:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

fn normalize_text(text: &str) -> String {
    let doc = parse_document(text, "golden").expect("golden parses");
    normalize_document(&doc)
        .expect("golden normalizes")
        .0
        .serialize()
}

/// Golden spelling set: the four raw/normalized pairs plus the chord
/// sorting case; ambiguous spellings converge to one output.
#[test]
fn acceptance_golden_spellings() {
    let started = Instant::now();
    let wrap = |tok: &str| format!("**kern\n*clefG2\n*M4/4\n=1\n{tok}\n=2\n*-\n");

    let a = normalize_text(&wrap("[8fJ"));
    let b = normalize_text(&wrap("8fJ["));
    assert!(a.contains("\n8f[J\n"), "{a}");
    assert_eq!(a, b, "ambiguous spellings must converge");

    assert!(normalize_text(&wrap("4c#n")).contains("\n4cn\n"));
    assert!(normalize_text(&wrap("4G[]")).contains("\n4G\n"));
    assert!(normalize_text(&wrap("4g 4e 4c")).contains("\n4c 4e 4g\n"));

    let met = "**kern\n*clefG2\n*met(c)\n*M4/4\n=1\n1c\n=2\n*-\n";
    let out = normalize_text(met);
    assert!(!out.contains("*met(c)"), "{out}");
    assert!(out.contains("*M4/4"));

    assert!(
        started.elapsed().as_secs_f64() < 1.0,
        "budget: under one second"
    );
    pass(
        "golden-spellings",
        "5 golden pairs + convergence".into(),
        started,
    );
}

/// normalize ∘ normalize == normalize, byte-identically, on 1000 generated
/// valid documents.
#[test]
fn acceptance_normalization_idempotence() {
    let started = Instant::now();
    let mut checked = 0usize;
    for (seed, file) in corpus_raw().iter().enumerate() {
        if !filter_file(file.as_bytes()).accepted() {
            panic!("generated document {seed} must pass the filter");
        }
        let doc = parse_document(file, "gen").expect("parses");
        let (once, _) = normalize_document(&doc).expect("normalizes");
        let text_once = once.serialize();
        let refilter = filter_file(text_once.as_bytes());
        assert!(
            refilter.accepted(),
            "seed {seed}: normal form re-rejected: {:?}",
            refilter.reasons
        );
        let reparsed = parse_document(&text_once, "gen").expect("normal form parses");
        let (twice, trace) = normalize_document(&reparsed).expect("normalizes again");
        assert_eq!(
            twice.serialize(),
            text_once,
            "seed {seed} not a fixed point"
        );
        assert!(trace.is_zero(), "seed {seed} second pass edited: {trace:?}");
        checked += 1;
    }
    assert!(
        checked >= 1000,
        "need at least 1000 documents, had {checked}"
    );
    assert!(
        started.elapsed().as_secs_f64() < 30.0,
        "budget: under 30 seconds"
    );
    pass(
        "normalization-idempotence",
        format!("{checked} documents, all fixed points"),
        started,
    );
}

/// serialize(parse(f)) == f for every filter-accepted corpus file.
#[test]
fn acceptance_roundtrip() {
    let started = Instant::now();
    let mut accepted = 0usize;
    for file in corpus_raw() {
        if !filter_file(file.as_bytes()).accepted() {
            continue;
        }
        accepted += 1;
        let doc = parse_document(file, "rt").expect("accepted file parses");
        assert_eq!(
            &serialize_document(&doc),
            file,
            "round-trip must be byte-identical"
        );
    }
    assert!(accepted > 0);
    pass(
        "roundtrip",
        format!("{accepted} accepted files byte-identical"),
        started,
    );
}

/// 10,000 uniform-random constrained decodes (toy and full vocabulary):
/// every eos-terminated output passes structural validation, and every run
/// ends within 2048 tokens.
#[test]
fn acceptance_constrained_soundness_fuzz() {
    let started = Instant::now();
    let toy = toy_vocab();
    let toy_engine = ConstraintEngine::new(&toy);
    let full = trained_vocab();
    let engine = full_engine();

    let mut eos_runs = 0usize;
    let mut total = 0usize;
    for (vocab, eng, seeds) in [(&toy, &toy_engine, 0..5000u64), (full, engine, 0..5000u64)] {
        for seed in seeds {
            let run = run_decode(&LogitSource::UniformRandom { seed }, vocab, eng, true, 2048)
                .expect("constrained decode never dead-ends on a closed vocabulary");
            total += 1;
            assert!(run.tokens.len() <= 2048);
            if run.terminated_by == TerminatedBy::Eos {
                eos_runs += 1;
                assert!(
                    run.valid,
                    "seed {seed}: eos-terminated output failed structural validation:\n{}",
                    String::from_utf8_lossy(&run.bytes)
                );
            }
        }
    }
    assert_eq!(total, 10_000);
    assert!(eos_runs > 0, "some runs should terminate naturally");
    assert!(
        started.elapsed().as_secs_f64() < 300.0,
        "budget: under five minutes"
    );
    pass(
        "constrained-soundness-fuzz",
        format!("10000 runs, {eos_runs} eos-terminated, 0 invalid"),
        started,
    );
}

/// On a ≤64-token vocabulary, mask decisions over every reachable prefix
/// up to 12 tokens equal a brute-force valid-completion search.
#[test]
fn acceptance_mask_completeness_oracle() {
    let started = Instant::now();
    let vocab = toy_vocab();
    assert!(vocab.len() <= 64, "toy vocabulary budget");
    let engine = ConstraintEngine::new(&vocab);

    // Enumerate unique states reachable by allowed tokens within 12 steps.
    // Masking is a pure function of the state, so deduplicating states
    // covers every prefix.
    let mut queue: VecDeque<(DecodeState, Vec<u8>, usize)> = VecDeque::new();
    let mut seen: HashSet<DecodeState> = HashSet::new();
    let init = engine.init_state();
    queue.push_back((init, Vec::new(), 0));
    seen.insert(init);
    let mut disagreements = 0usize;
    let mut states = 0usize;
    let mut checks = 0usize;
    let mut completable: CompletionCache = HashMap::new();
    while let Some((state, prefix, depth)) = queue.pop_front() {
        states += 1;
        let mask = engine.compute_mask(&state);
        for id in 0..vocab.len() as u32 {
            let impl_allowed = mask.is_allowed(id);
            let oracle_allowed =
                oracle_allows(&engine, &vocab, &state, &prefix, id, &mut completable);
            checks += 1;
            if impl_allowed != oracle_allowed {
                disagreements += 1;
                eprintln!(
                    "disagreement at depth {depth}: token {id} ({:?}) impl={impl_allowed} oracle={oracle_allowed} prefix={:?}",
                    vocab.token_bytes(id).map(String::from_utf8_lossy),
                    String::from_utf8_lossy(&prefix)
                );
            }
            if impl_allowed && id != BOS_ID && id != EOS_ID && depth < 12 {
                let next = engine.advance(&state, id).expect("allowed token advances");
                if seen.insert(next) {
                    let mut p = prefix.clone();
                    p.extend(vocab.token_bytes(id).expect("byte token"));
                    queue.push_back((next, p, depth + 1));
                }
            }
        }
    }
    assert_eq!(disagreements, 0, "mask and oracle must agree everywhere");
    pass(
        "mask-completeness-oracle",
        format!("{states} states, {checks} decisions, 100% agreement"),
        started,
    );
}

/// Brute-force: a token is valid iff its bytes advance the recognizer and
/// a complete document remains reachable; end-of-sequence is valid iff the
/// prefix already is a structurally valid document (checked by the
/// parser, not the engine).
fn oracle_allows(
    engine: &ConstraintEngine,
    vocab: &BpeVocab,
    state: &DecodeState,
    prefix: &[u8],
    id: u32,
    completable: &mut CompletionCache,
) -> bool {
    if id == BOS_ID {
        return false;
    }
    if id == EOS_ID {
        // A complete document is non-empty, ends on a record boundary
        // (records are LF-terminated), and passes structural validation.
        return prefix.last() == Some(&b'\n') && structural_validity(prefix);
    }
    let bytes = match vocab.token_bytes(id) {
        Some(b) => b,
        None => return false,
    };
    let Some(after) = engine.advance_bytes(state, bytes) else {
        return false;
    };
    if let Some(&verdict) = completable.get(&after) {
        return verdict;
    }
    // Byte-level reachability of a terminated configuration.
    let mut queue: VecDeque<DecodeState> = VecDeque::new();
    let mut seen: HashSet<DecodeState> = HashSet::new();
    queue.push_back(after);
    seen.insert(after);
    let mut verdict = false;
    let mut expansions = 0usize;
    while let Some(s) = queue.pop_front() {
        if s.terminated() {
            verdict = true;
            break;
        }
        expansions += 1;
        assert!(
            expansions < 200_000,
            "completion search exhausted its budget; grammar has a trap state"
        );
        for b in 0u16..=255 {
            if let Some(next) = engine.advance_bytes(&s, &[b as u8]) {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
    }
    completable.insert(after, verdict);
    verdict
}

/// For every normalized corpus file, replaying its token sequence through
/// the constrained decoder hits zero masked tokens.
#[test]
fn acceptance_ground_truth_admissibility() {
    let started = Instant::now();
    let vocab = trained_vocab();
    let engine = full_engine();
    let mut files = 0usize;
    for text in corpus_normalized() {
        let ids = vocab.encode(text);
        let run = run_decode(&LogitSource::Replay(ids), vocab, engine, true, usize::MAX);
        match run {
            Ok(run) => {
                assert_eq!(run.terminated_by, TerminatedBy::Eos);
                assert_eq!(run.bytes, text.as_bytes(), "replay must be byte-identical");
            }
            Err(e) => panic!("file {files}: {e}\n{text}"),
        }
        files += 1;
    }
    assert!(files > 0);
    pass(
        "ground-truth-admissibility",
        format!("{files} normalized files replayed mask-clean"),
        started,
    );
}

/// Trained 3000-token vocabulary: no token mixes a boundary byte with
/// anything else, and decode ∘ encode is the identity on the corpus.
#[test]
fn acceptance_bpe_boundary_and_identity() {
    let started = Instant::now();
    let vocab = trained_vocab();
    assert!(vocab.len() <= 3000, "vocabulary size budget");
    let mut multi_byte = 0usize;
    for id in 0..vocab.len() as u32 {
        if let Some(bytes) = vocab.token_bytes(id) {
            if bytes.len() > 1 {
                multi_byte += 1;
                assert!(
                    !bytes.iter().any(|&b| bpe::is_boundary_byte(b)),
                    "token {id} {bytes:?} embeds a boundary byte"
                );
            }
        }
    }
    assert!(multi_byte > 0, "training should learn merges");
    let mut files = 0usize;
    for text in corpus_raw().iter().chain(corpus_normalized().iter()) {
        assert_eq!(&vocab.decode(&vocab.encode(text)).expect("decodes"), text);
        files += 1;
    }
    pass(
        "bpe-boundary-and-identity",
        format!("{multi_byte} merged tokens boundary-free, {files} files identity"),
        started,
    );
}

/// cer equals a full-matrix DP oracle on 1000 random pairs, exactly;
/// omr_ned is zero on identity, one against empty, and symmetric to exact
/// rational equality on 1000 random pairs.
#[test]
fn acceptance_metric_oracles() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0x5eed);
    let alphabet: Vec<char> = "abc4 8#\tné".chars().collect();
    for case in 0..1000 {
        let ref_len = 1 + rng.below(50);
        let pred_len = rng.below(50);
        let mk = |rng: &mut SplitMix64, len: usize| -> String {
            (0..len)
                .map(|_| alphabet[rng.below(alphabet.len())])
                .collect()
        };
        let r = mk(&mut rng, ref_len);
        let p = mk(&mut rng, pred_len);
        let got = cer(&r, &p).expect("nonempty reference");
        let rc: Vec<char> = r.chars().collect();
        let pc: Vec<char> = p.chars().collect();
        let expected = dp_levenshtein_oracle(&rc, &pc) as f64 / rc.len() as f64;
        assert_eq!(got, expected, "case {case}: cer({r:?}, {p:?})");
    }
    assert_eq!(cer("", "").unwrap(), 0.0);
    assert!(matches!(cer("", "x"), Err(MetricError::EmptyReference)));

    let docs: Vec<KernDocument> = corpus_normalized()
        .iter()
        .take(2000)
        .map(|f| parse_document(f, "m").expect("parses"))
        .collect();
    assert!(docs.len() >= 2, "need documents for pairing");
    let empty = parse_document("", "empty").unwrap();
    let mut pairs = 0usize;
    for i in 0..1000 {
        let a = &docs[i % docs.len()];
        let b = &docs[(i * 7 + 13) % docs.len()];
        let ab = omr_ned(a, b).expect("events extract");
        let ba = omr_ned(b, a).expect("events extract");
        assert_eq!(ab.omr_ned, ba.omr_ned, "pair {i} asymmetric");
        assert!(ab.omr_ned >= Rational::ZERO && ab.omr_ned <= Rational::ONE);
        pairs += 1;
    }
    for d in docs.iter().take(200) {
        assert_eq!(omr_ned(d, d).expect("identity").omr_ned, Rational::ZERO);
        assert_eq!(
            omr_ned(d, &empty).expect("empty pred").omr_ned,
            Rational::ONE
        );
    }
    pass(
        "metric-oracles",
        format!("1000 cer cases exact, {pairs} symmetric pairs"),
        started,
    );
}

/// Full-matrix quadratic reference, independent of the two-row version.
fn dp_levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    dp[a.len()][b.len()]
}

/// Measure mathematics: the short measure in 4/4 is flagged; the dotted
/// half in 3/4 passes; arithmetic is exact.
#[test]
fn acceptance_measure_mathematics() {
    let started = Instant::now();
    let bad = "**kern\n*clefG2\n*M4/4\n=1\n1c\n=2\n4c\n4d\n4e\n=3\n1c\n=4\n*-\n";
    let doc = parse_document(bad, "bad").unwrap();
    let mismatches = check_measures(&doc).expect("computable");
    assert_eq!(mismatches.len(), 1);
    assert_eq!(mismatches[0].measure, 2);
    assert_eq!(mismatches[0].voice, 0);
    assert_eq!(mismatches[0].expected, Rational::new(1, 1));
    assert_eq!(mismatches[0].actual, Rational::new(3, 4));
    assert!(!filter_file(bad.as_bytes()).accepted());

    let good = "**kern\n*clefG2\n*M3/4\n=1\n2.c\n=2\n2.d\n=3\n*-\n";
    let doc = parse_document(good, "good").unwrap();
    assert_eq!(check_measures(&doc).expect("computable"), vec![]);
    assert!(filter_file(good.as_bytes()).accepted());
    pass(
        "measure-mathematics",
        "exact rational verdicts".into(),
        started,
    );
}

/// Replay of loop statistics stays well-defined on decoders that run away.
#[test]
fn acceptance_loop_detection_support() {
    let started = Instant::now();
    let vocab = toy_vocab();
    let engine = ConstraintEngine::new(&vocab);
    let runs: Vec<DecodeRun> = (0..50)
        .map(|seed| {
            run_decode(
                &LogitSource::UniformRandom { seed },
                &vocab,
                &engine,
                true,
                256,
            )
            .expect("decode")
        })
        .collect();
    let targets = vec![16usize; runs.len()];
    let stats = loop_stats(&runs, &targets);
    assert_eq!(stats.runs, 50);
    assert!((0.0..=1.0).contains(&stats.loop_fraction));
    for run in &runs {
        let w = max_repeated_window(&run.tokens);
        assert!(w <= run.tokens.len() / 2);
    }
    pass(
        "loop-detection-support",
        format!("max window {}", stats.max_window),
        started,
    );
}

// Closed under continuation (see constraint tests): from every reachable
// state at least one token, or EOS, stays unmasked.
fn toy_vocab() -> BpeVocab {
    BpeVocab::from_token_list(vec![
        &b"*"[..],
        b"k",
        b"e",
        b"r",
        b"n",
        b"^",
        b"v",
        b"-",
        b"\t",
        b"\n",
        b"=",
        b".",
        b" ",
        b"4",
        b"8",
        b"c",
        b"g",
        b"[",
        b"]",
        b"**kern",
        b"*-",
        b"*^",
        b"*v",
        b"*clefG2",
        b"*M4/4",
        b"4c",
        b"4e",
        b"8f",
        b"=1",
        b"2.c",
        b"4g 4e 4c",
    ])
}

/// The committed sample files behave as labeled.
#[test]
fn acceptance_sample_corpus_labels() {
    let started = Instant::now();
    for (name, text) in sample_files() {
        let report = filter_file(text.as_bytes());
        assert!(report.accepted(), "{name}: {:?}", report.reasons);
    }
    for (name, text) in [
        (
            "reject_missing_clef",
            include_str!("data/reject_missing_clef.krn"),
        ),
        (
            "reject_bad_measure",
            include_str!("data/reject_bad_measure.krn"),
        ),
        (
            "reject_mixed_case",
            include_str!("data/reject_mixed_case.krn"),
        ),
        (
            "reject_no_terminator",
            include_str!("data/reject_no_terminator.krn"),
        ),
    ] {
        assert!(
            !filter_file(text.as_bytes()).accepted(),
            "{name} must reject"
        );
    }
    pass(
        "sample-corpus-labels",
        "5 accepted, 4 rejected".into(),
        started,
    );
}
