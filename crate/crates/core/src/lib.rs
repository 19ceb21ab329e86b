//! Deterministic text machinery for the Humdrum `**kern` music format.
//!
//! The crate covers everything between raw `**kern` bytes and a decoding
//! loop: a lossless parser ([`kern`]), a corpus filter ([`filter`]), a
//! canonical normal form ([`normalize`]), a whitespace-bounded BPE
//! tokenizer ([`bpe`]), an incremental validity engine that masks
//! vocabulary tokens during generation ([`constraint`]), transcription
//! metrics ([`metrics`]), and a decode simulator ([`harness`]).
//!
//! ```
//! use kernforge::*;
//!
//! let raw = "**kern\n*clefG2\n*M4/4\n=1\n4g 4e 4c\n2d\n[4fJ\n=2\n1c\n==\n*-\n";
//! assert!(filter_file(raw.as_bytes()).accepted());
//!
//! let doc = parse_document(raw, "example")?;
//! assert_eq!(serialize_document(&doc), raw);
//!
//! let (normal, _trace) = normalize_document(&doc)?;
//! assert!(normal.serialize().contains("4c 4e 4g"));
//! assert_eq!(omr_ned(&doc, &normal)?.omr_ned, Rational::ZERO);
//!
//! let vocab = BpeVocab::train([normal.serialize()], 3000)?;
//! let engine = ConstraintEngine::new(&vocab);
//! let replay = LogitSource::Replay(vocab.encode(&normal.serialize()));
//! let run = run_decode(&replay, &vocab, &engine, true, 2048)?;
//! assert!(run.valid);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bpe;
pub mod constraint;
pub mod filter;
pub mod harness;
pub mod kern;
pub mod metrics;
pub mod normalize;
pub mod rational;

pub use bpe::{BpeError, BpeVocab, BOS_ID, EOS_ID};
pub use constraint::{ConstraintEngine, DecodeState, EngineError, TokenMask};
pub use filter::{check_measures, filter_file, structural_validity, FilterReport, Verdict};
pub use harness::{loop_stats, run_decode, DecodeRun, LogitSource, LoopStats, TerminatedBy};
pub use kern::{
    parse_bytes, parse_document, pitch_of, serialize_document, token_duration, Cell, DataCell,
    KernDocument, Manipulator, NoteToken, ParseError, Pitch, PitchError, Record, RecordKind,
};
pub use metrics::{cer, extract_events, omr_ned, MetricError, MetricReport, SymbolEvent};
pub use normalize::{normalize_document, NormalizationTrace, NormalizeError};
pub use rational::Rational;
