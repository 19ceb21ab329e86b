//! `kernforge` — command-line entry point wiring the data-engine
//! workflow: filter, normalize, tokenize, mask, simulate, score.
//!
//! Machine-readable JSONL goes to stdout; diagnostics and the optional
//! `--summary` go to stderr. Exit codes: 0 success, 1 any rejected or
//! failed item, 2 usage error.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kernforge::harness::AdversarialRule;
use kernforge::normalize::NormalizationTrace;
use kernforge::*;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const DEFAULT_VOCAB_SIZE: usize = 3000;
const DEFAULT_MAX_LENGTH: usize = 2048;

#[derive(Parser)]
#[command(
    name = "kernforge",
    version,
    about = "Deterministic **kern machinery: filtering, normal forms, BPE, decode masks, metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for multi-file runs (default: $KERNFORGE_WORKERS,
    /// then all cores). Output order never depends on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print a human summary to stderr after the JSONL stream.
    #[arg(long, global = true)]
    summary: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the corpus filter and report one verdict line per file.
    Validate {
        /// Files or directories (directories expand to *.krn, sorted).
        inputs: Vec<PathBuf>,
        /// Additional input file or directory.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Like validate, but copy accepted files into --out.
    Filter {
        inputs: Vec<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Directory receiving accepted files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Map accepted files to normal form; reports per-pass edit counts.
    Normalize {
        inputs: Vec<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Directory receiving normalized files (omit for a dry run).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the split-space BPE vocabulary on normalized text.
    BpeTrain {
        inputs: Vec<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
        vocab_size: usize,
        /// Vocabulary JSON output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode files to token ids.
    BpeEncode {
        inputs: Vec<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Decode comma-separated ids back to text.
    BpeDecode {
        #[arg(long)]
        vocab: PathBuf,
        /// Token ids, e.g. "260,9,261".
        #[arg(long)]
        ids: String,
    },
    /// Emit the allowed-token ids for a decode prefix.
    Mask {
        #[arg(long)]
        vocab: PathBuf,
        /// Prefix text; reads stdin when omitted.
        #[arg(long)]
        prefix: Option<String>,
        /// Read the prefix from a file instead.
        #[arg(long, conflicts_with = "prefix")]
        prefix_file: Option<PathBuf>,
    },
    /// Simulate decoding with a synthetic logit source.
    Simulate {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Uniform)]
        mode: Mode,
        /// First seed (uniform mode).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of runs (seeds seed..seed+N for uniform mode).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        constrained: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_LENGTH)]
        max_length: usize,
        /// File to tokenize and replay (mode = replay).
        #[arg(long)]
        replay_file: Option<PathBuf>,
        /// Include loop statistics in a trailing line.
        #[arg(long)]
        stats: bool,
    },
    /// Score predictions against references (files or directories).
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Emit a trailing corpus-mean line.
        #[arg(long)]
        aggregate: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Uniform,
    AlwaysTab,
    AlwaysNewline,
    AlwaysSplit,
    LongestFirst,
    Replay,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers(cli.workers);
    match run(cli) {
        Ok(clean) => {
            if clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("kernforge: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn init_workers(flag: Option<usize>) {
    let env = std::env::var("KERNFORGE_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(env) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Returns whether every item succeeded.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate { inputs, input } => {
            let files = collect_inputs(inputs, input)?;
            cmd_validate(&files, cli.summary, None)
        }
        Command::Filter { inputs, input, out } => {
            let files = collect_inputs(inputs, input)?;
            cmd_validate(&files, cli.summary, Some(&out))
        }
        Command::Normalize { inputs, input, out } => {
            let files = collect_inputs(inputs, input)?;
            cmd_normalize(&files, out.as_deref(), cli.summary)
        }
        Command::BpeTrain {
            inputs,
            input,
            vocab_size,
            out,
        } => {
            let files = collect_inputs(inputs, input)?;
            cmd_bpe_train(&files, vocab_size, &out)
        }
        Command::BpeEncode {
            inputs,
            input,
            vocab,
        } => {
            let files = collect_inputs(inputs, input)?;
            cmd_bpe_encode(&files, &vocab)
        }
        Command::BpeDecode { vocab, ids } => cmd_bpe_decode(&vocab, &ids),
        Command::Mask {
            vocab,
            prefix,
            prefix_file,
        } => cmd_mask(&vocab, prefix, prefix_file),
        Command::Simulate {
            vocab,
            mode,
            seed,
            seeds,
            constrained,
            max_length,
            replay_file,
            stats,
        } => cmd_simulate(
            &vocab,
            mode,
            seed,
            seeds,
            constrained,
            max_length,
            replay_file,
            stats,
        ),
        Command::Score {
            reference,
            pred,
            aggregate,
        } => cmd_score(&reference, &pred, aggregate, cli.summary),
    }
}

/// Expand files and directories; directories contribute their *.krn files
/// in sorted path order.
fn collect_inputs(positional: Vec<PathBuf>, flagged: Option<PathBuf>) -> Result<Vec<PathBuf>> {
    let mut roots = positional;
    roots.extend(flagged);
    if roots.is_empty() {
        bail!("no inputs given");
    }
    let mut files = Vec::new();
    for root in roots {
        if root.is_dir() {
            files.extend(krn_files_in(&root)?);
        } else {
            files.push(root);
        }
    }
    Ok(files)
}

fn krn_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().map(|e| e == "krn").unwrap_or(false) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn emit<T: Serialize>(line: &T) {
    println!(
        "{}",
        serde_json::to_string(line).expect("serializable report")
    );
}

#[derive(Serialize)]
struct ValidateLine<'a> {
    path: String,
    verdict: &'a str,
    reasons: Vec<ReasonLine>,
}

#[derive(Serialize)]
struct ReasonLine {
    rule: String,
    line: usize,
    message: String,
}

fn reason_lines(report: &FilterReport) -> Vec<ReasonLine> {
    report
        .reasons
        .iter()
        .map(|r| ReasonLine {
            rule: r.rule.to_string(),
            line: r.line,
            message: r.message.clone(),
        })
        .collect()
}

/// Unreadable inputs reject with their own rule instead of masquerading
/// as empty documents.
fn io_reject(e: &std::io::Error) -> FilterReport {
    FilterReport {
        verdict: Verdict::Reject,
        reasons: vec![kernforge::filter::Reason {
            rule: "io-error",
            line: 0,
            message: e.to_string(),
        }],
    }
}

fn cmd_validate(files: &[PathBuf], summary: bool, copy_to: Option<&Path>) -> Result<bool> {
    if let Some(dir) = copy_to {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let results: Vec<(PathBuf, Vec<u8>, FilterReport)> = files
        .par_iter()
        .map(|path| {
            let (bytes, report) = match std::fs::read(path) {
                Ok(bytes) => {
                    let report = filter_file(&bytes);
                    (bytes, report)
                }
                Err(e) => (Vec::new(), io_reject(&e)),
            };
            (path.clone(), bytes, report)
        })
        .collect();
    let mut accepted = 0usize;
    for (path, bytes, report) in &results {
        if report.accepted() {
            accepted += 1;
            if let Some(dir) = copy_to {
                let name = path.file_name().ok_or_else(|| anyhow!("bad path"))?;
                std::fs::write(dir.join(name), bytes)?;
            }
        }
        emit(&ValidateLine {
            path: path.display().to_string(),
            verdict: if report.accepted() {
                "accept"
            } else {
                "reject"
            },
            reasons: reason_lines(report),
        });
    }
    if summary {
        eprintln!(
            "validate: {accepted} accepted, {} rejected of {}",
            results.len() - accepted,
            results.len()
        );
    }
    Ok(accepted == results.len())
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum NormalizeLine {
    Ok {
        path: String,
        edits: NormalizationTrace,
        total_edits: u64,
        output: Option<String>,
    },
    Rejected {
        path: String,
        reasons: Vec<ReasonLine>,
    },
    Error {
        path: String,
        error: String,
    },
}

fn cmd_normalize(files: &[PathBuf], out: Option<&Path>, summary: bool) -> Result<bool> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let results: Vec<NormalizeLine> = files
        .par_iter()
        .map(|path| {
            let display = path.display().to_string();
            let bytes = match std::fs::read(path) {
                Ok(bytes) => bytes,
                Err(e) => {
                    return NormalizeLine::Rejected {
                        path: display,
                        reasons: reason_lines(&io_reject(&e)),
                    }
                }
            };
            let report = filter_file(&bytes);
            if !report.accepted() {
                return NormalizeLine::Rejected {
                    path: display,
                    reasons: reason_lines(&report),
                };
            }
            let text = String::from_utf8(bytes).expect("filter checked UTF-8");
            let doc = parse_document(&text, &display).expect("filter checked parseability");
            match normalize_document(&doc) {
                Err(e) => NormalizeLine::Error {
                    path: display,
                    error: e.to_string(),
                },
                Ok((normalized, trace)) => {
                    let serialized = normalized.serialize();
                    let written = out.map(|dir| {
                        let name = path.file_name().expect("regular file");
                        let target = dir.join(name);
                        std::fs::write(&target, &serialized).expect("writable output dir");
                        target.display().to_string()
                    });
                    NormalizeLine::Ok {
                        path: display,
                        total_edits: trace.total(),
                        edits: trace,
                        output: written,
                    }
                }
            }
        })
        .collect();
    let mut ok = 0usize;
    let mut edits = 0u64;
    for line in &results {
        if let NormalizeLine::Ok { total_edits, .. } = line {
            ok += 1;
            edits += total_edits;
        }
        emit(line);
    }
    if summary {
        eprintln!(
            "normalize: {ok} of {} files normalized, {edits} edits",
            results.len()
        );
    }
    Ok(ok == results.len())
}

#[derive(Serialize)]
struct TrainLine {
    status: &'static str,
    files: usize,
    vocab_size: usize,
    merges: usize,
    output: String,
}

fn cmd_bpe_train(files: &[PathBuf], vocab_size: usize, out: &Path) -> Result<bool> {
    let mut texts = Vec::with_capacity(files.len());
    for path in files {
        texts.push(
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        );
    }
    let vocab = BpeVocab::train(&texts, vocab_size)?;
    vocab
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    emit(&TrainLine {
        status: "ok",
        files: texts.len(),
        vocab_size: vocab.len(),
        merges: vocab.merges().len(),
        output: out.display().to_string(),
    });
    Ok(true)
}

#[derive(Serialize)]
struct EncodeLine {
    path: String,
    count: usize,
    ids: Vec<u32>,
}

fn cmd_bpe_encode(files: &[PathBuf], vocab_path: &Path) -> Result<bool> {
    let vocab = BpeVocab::load(vocab_path)?;
    for path in files {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let ids = vocab.encode(&text);
        emit(&EncodeLine {
            path: path.display().to_string(),
            count: ids.len(),
            ids,
        });
    }
    Ok(true)
}

#[derive(Serialize)]
struct DecodeLine {
    text: String,
}

fn cmd_bpe_decode(vocab_path: &Path, ids: &str) -> Result<bool> {
    let vocab = BpeVocab::load(vocab_path)?;
    let ids: Vec<u32> = ids
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u32>().context("token id"))
        .collect::<Result<_>>()?;
    let text = vocab.decode(&ids)?;
    emit(&DecodeLine { text });
    Ok(true)
}

#[derive(Serialize)]
struct MaskLine {
    allowed: Vec<u32>,
    count: usize,
    active_spines: u32,
    fields_in_record: u32,
    terminated: bool,
}

fn cmd_mask(
    vocab_path: &Path,
    prefix: Option<String>,
    prefix_file: Option<PathBuf>,
) -> Result<bool> {
    let vocab = BpeVocab::load(vocab_path)?;
    let prefix = match (prefix, prefix_file) {
        (Some(p), _) => p,
        (None, Some(f)) => {
            std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?
        }
        (None, None) => {
            let mut buf = String::new();
            std::io::stdin().read_to_string(&mut buf)?;
            buf
        }
    };
    let engine = ConstraintEngine::new(&vocab);
    let state = engine
        .advance_bytes(&engine.init_state(), prefix.as_bytes())
        .ok_or_else(|| anyhow!("prefix is not extendable to a valid document"))?;
    let mask = engine.compute_mask(&state);
    emit(&MaskLine {
        allowed: mask.allowed_ids().collect(),
        count: mask.count_allowed(),
        active_spines: state.active_spines(),
        fields_in_record: state.fields_in_record(),
        terminated: state.terminated(),
    });
    Ok(true)
}

#[derive(Serialize)]
struct SimulateLine {
    run: u64,
    seed: Option<u64>,
    mode: &'static str,
    constrained: bool,
    length: usize,
    terminated_by: TerminatedBy,
    valid: bool,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    vocab_path: &Path,
    mode: Mode,
    seed: u64,
    seeds: u64,
    constrained: bool,
    max_length: usize,
    replay_file: Option<PathBuf>,
    stats: bool,
) -> Result<bool> {
    let vocab = BpeVocab::load(vocab_path)?;
    let engine = ConstraintEngine::new(&vocab);
    let mode_name = match mode {
        Mode::Uniform => "uniform",
        Mode::AlwaysTab => "always-tab",
        Mode::AlwaysNewline => "always-newline",
        Mode::AlwaysSplit => "always-split",
        Mode::LongestFirst => "longest-first",
        Mode::Replay => "replay",
    };
    let mut runs = Vec::new();
    let mut all_valid = true;
    for i in 0..seeds.max(1) {
        let source = match mode {
            Mode::Uniform => LogitSource::UniformRandom { seed: seed + i },
            Mode::AlwaysTab => LogitSource::Adversarial(AdversarialRule::AlwaysTab),
            Mode::AlwaysNewline => LogitSource::Adversarial(AdversarialRule::AlwaysNewline),
            Mode::AlwaysSplit => LogitSource::Adversarial(AdversarialRule::AlwaysSplit),
            Mode::LongestFirst => LogitSource::Adversarial(AdversarialRule::LongestFirst),
            Mode::Replay => {
                let path = replay_file
                    .as_ref()
                    .ok_or_else(|| anyhow!("--replay-file is required for replay mode"))?;
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                LogitSource::Replay(vocab.encode(&text))
            }
        };
        let run = run_decode(&source, &vocab, &engine, constrained, max_length)?;
        all_valid &= run.valid || run.terminated_by == TerminatedBy::MaxLength;
        emit(&SimulateLine {
            run: i,
            seed: (mode == Mode::Uniform).then_some(seed + i),
            mode: mode_name,
            constrained,
            length: run.tokens.len(),
            terminated_by: run.terminated_by,
            valid: run.valid,
        });
        runs.push(run);
    }
    if stats {
        let targets = vec![max_length / 4; runs.len()];
        emit(&loop_stats(&runs, &targets));
    }
    Ok(all_valid)
}

#[derive(Serialize)]
struct ScoreLine {
    pair: String,
    cer: Option<f64>,
    omr_ned: f64,
    matched: usize,
    inserted: usize,
    deleted: usize,
}

#[derive(Serialize)]
struct AggregateLine {
    aggregate: bool,
    pairs: usize,
    mean_cer: Option<f64>,
    mean_omr_ned: f64,
}

fn cmd_score(reference: &Path, pred: &Path, aggregate: bool, summary: bool) -> Result<bool> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if reference.is_dir() && pred.is_dir() {
        let refs = krn_files_in(reference)?;
        let mut out = Vec::new();
        for r in refs {
            let name = r.file_name().expect("file").to_string_lossy().to_string();
            let p = pred.join(&name);
            if p.exists() {
                out.push((name, r, p));
            } else {
                bail!("prediction missing for {name}");
            }
        }
        out
    } else if reference.is_file() && pred.is_file() {
        vec![(
            pred.file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| "pair".into()),
            reference.to_path_buf(),
            pred.to_path_buf(),
        )]
    } else {
        bail!("--ref and --pred must both be files or both directories");
    };

    let reports: Vec<Result<(String, MetricReport)>> = pairs
        .par_iter()
        .map(|(name, r, p)| {
            let ref_text = std::fs::read_to_string(r)?;
            let pred_text = std::fs::read_to_string(p)?;
            let ref_doc = parse_document(&ref_text, name).map_err(|e| anyhow!("{name}: {e}"))?;
            let pred_doc = parse_document(&pred_text, name).map_err(|e| anyhow!("{name}: {e}"))?;
            let report = omr_ned(&ref_doc, &pred_doc).map_err(|e| anyhow!("{name}: {e}"))?;
            Ok((name.clone(), report))
        })
        .collect();

    let mut ok = true;
    let mut cer_sum = 0.0;
    let mut cer_count = 0usize;
    let mut ned_sum = 0.0;
    let mut count = 0usize;
    for item in reports {
        match item {
            Err(e) => {
                eprintln!("score: {e:#}");
                ok = false;
            }
            Ok((pair, report)) => {
                count += 1;
                ned_sum += report.omr_ned.to_f64();
                if let Some(c) = report.cer {
                    cer_sum += c;
                    cer_count += 1;
                }
                emit(&ScoreLine {
                    pair,
                    cer: report.cer,
                    omr_ned: report.omr_ned_percent() / 100.0,
                    matched: report.matched,
                    inserted: report.inserted,
                    deleted: report.deleted,
                });
            }
        }
    }
    if aggregate && count > 0 {
        emit(&AggregateLine {
            aggregate: true,
            pairs: count,
            mean_cer: (cer_count > 0).then(|| cer_sum / cer_count as f64),
            mean_omr_ned: ned_sum / count as f64,
        });
    }
    if summary && count > 0 {
        eprintln!(
            "score: {count} pairs, mean omr-ned {:.2}%",
            100.0 * ned_sum / count as f64
        );
    }
    Ok(ok)
}
