//! Corpus filtering: decide whether a file is fit to become a training
//! target. All failures are report entries, never exceptions, so corpus
//! runs can tally rejection reasons.

use crate::kern::{
    self, parse_bytes, CellPayload, DataCell, KernDocument, NoteToken, RecordKind, RecordTopology,
    SpineState,
};
use crate::rational::Rational;
use serde::Serialize;
use thiserror::Error;

/// Outcome of the rule chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

/// One failed rule, with the first offending line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reason {
    pub rule: &'static str,
    pub line: usize,
    pub message: String,
}

/// Verdict plus the reasons behind it; rejected iff any reason fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
}

impl FilterReport {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    fn from_reasons(reasons: Vec<Reason>) -> Self {
        let verdict = if reasons.is_empty() {
            Verdict::Accept
        } else {
            Verdict::Reject
        };
        FilterReport { verdict, reasons }
    }
}

fn reason(rule: &'static str, line: usize, message: impl Into<String>) -> Reason {
    Reason {
        rule,
        line,
        message: message.into(),
    }
}

/// Run the fixed rule chain over raw bytes: UTF-8, LF-only line endings,
/// parseability, conversion-artifact residue, spine terminators, clefs,
/// accidental runs, duration spellings, octave spellings, and measure
/// mathematics.
pub fn filter_file(bytes: &[u8]) -> FilterReport {
    let mut reasons = Vec::new();

    let text = match std::str::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => {
            reasons.push(reason(
                "broken-utf8",
                1,
                format!("invalid UTF-8 at byte {}", e.valid_up_to()),
            ));
            return FilterReport::from_reasons(reasons);
        }
    };

    if let Some(pos) = text.find('\r') {
        let line = text[..pos].matches('\n').count() + 1;
        reasons.push(reason("line-ending", line, "carriage return in input"));
    }

    let doc = match kern::parse_document(text, "input") {
        Ok(d) => d,
        Err(e) => {
            let line = match &e {
                kern::ParseError::RecordWidthMismatch { line }
                | kern::ParseError::MixedRecordKind { line }
                | kern::ParseError::UnknownExclusiveInterp { line }
                | kern::ParseError::LexError { line, .. } => *line,
                kern::ParseError::NotUtf8 => 1,
            };
            reasons.push(reason("unparseable", line, e.to_string()));
            return FilterReport::from_reasons(reasons);
        }
    };

    scan_tokens(&doc, &mut reasons);
    scan_topology(&doc, &mut reasons);
    match check_measures(&doc) {
        Ok(mismatches) => {
            for m in mismatches {
                reasons.push(reason(
                    "measure-math",
                    m.line,
                    format!(
                        "measure {} voice {} sums to {} but the signature expects {}",
                        m.measure, m.voice, m.actual, m.expected
                    ),
                ));
            }
        }
        Err(e) => {
            let (rule, line) = match &e {
                MeasureCheckError::NoTimeSignature { line } => ("no-time-signature", *line),
                MeasureCheckError::TokenDuration { line } => ("token-duration", *line),
                MeasureCheckError::ChordDurationMismatch { line } => ("chord-duration", *line),
                MeasureCheckError::InvalidStructure { line } => ("unparseable", *line),
            };
            reasons.push(reason(rule, line, e.to_string()));
        }
    }

    FilterReport::from_reasons(reasons)
}

/// Per-token checks: artifact residue, repaired accidental runs, duration
/// spellings, corrupted octave spellings.
fn scan_tokens(doc: &KernDocument, reasons: &mut Vec<Reason>) {
    let mut artifact = None;
    let mut accidental = None;
    let mut duration = None;
    let mut pitch = None;
    for (i, rec) in doc.records.iter().enumerate() {
        let line = i + 1;
        for cell in &rec.cells {
            let toks = match &cell.payload {
                CellPayload::Data(DataCell::Notes(toks)) => toks,
                _ => continue,
            };
            for tok in toks {
                if tok.unknown_trailing.len() > 2 && artifact.is_none() {
                    artifact = Some(reason(
                        "conversion-artifact",
                        line,
                        format!(
                            "token {:?} carries residue {:?}",
                            tok.raw, tok.unknown_trailing
                        ),
                    ));
                }
                if accidental.is_none() {
                    if let Some(msg) = accidental_problem(tok) {
                        accidental = Some(reason("accidental-run", line, msg));
                    }
                }
                if duration.is_none() {
                    if let Some(msg) = duration_problem(tok) {
                        duration = Some(reason("unsupported-duration", line, msg));
                    }
                }
                if pitch.is_none() && corrupted_pitch(tok) {
                    pitch = Some(reason(
                        "pitch-spelling",
                        line,
                        format!("corrupted octave spelling in {:?}", tok.raw),
                    ));
                }
            }
        }
    }
    reasons.extend(artifact);
    reasons.extend(accidental);
    reasons.extend(duration);
    reasons.extend(pitch);
}

fn accidental_problem(tok: &NoteToken) -> Option<String> {
    let repaired = match kern::repair_accidental_run(&tok.accidental) {
        Ok(r) => r,
        Err(_) => {
            return Some(format!(
                "three accidental families in one token ({:?})",
                tok.raw
            ))
        }
    };
    if repaired.contains('#') && repaired.contains('-') {
        return Some(format!("sharp and flat mixed in one token ({:?})", tok.raw));
    }
    for fam in ['#', '-', 'n'] {
        if repaired.chars().filter(|&c| c == fam).count() > 2 {
            return Some(format!(
                "more than two {fam:?} accidentals in one token ({:?})",
                tok.raw
            ));
        }
    }
    None
}

fn duration_problem(tok: &NoteToken) -> Option<String> {
    if tok.duration_digits.len() >= 2 && tok.duration_digits.parse::<u64>() == Ok(0) {
        return Some(format!(
            "longa spelling {:?} unsupported",
            tok.duration_digits
        ));
    }
    if !tok.duration_digits.is_empty() && tok.duration_digits.parse::<u32>().is_err() {
        return Some(format!(
            "duration digits {:?} out of range",
            tok.duration_digits
        ));
    }
    None
}

fn corrupted_pitch(tok: &NoteToken) -> bool {
    let mut chars = tok.pitch_letters.chars();
    match chars.next() {
        None => false,
        Some(first) => chars.any(|c| c != first),
    }
}

/// Topology-dependent checks: terminators, presence of a `**kern` spine,
/// and a clef before each kern spine's first data record.
fn scan_topology(doc: &KernDocument, reasons: &mut Vec<Reason>) {
    let mut spines = SpineState::new();
    // Per-column: (clef seen, already reported).
    let mut clef: Vec<(bool, bool)> = Vec::new();
    let mut saw_kern = false;
    let mut missing_clef = Vec::new();
    for (i, rec) in doc.records.iter().enumerate() {
        let line = i + 1;
        let Ok(topo) = spines.apply(rec, line) else {
            return; // unreachable for parsed documents
        };
        match topo {
            RecordTopology::Introduced => {
                clef = vec![(false, false); spines.width()];
                saw_kern = spines.cols.iter().any(|c| c.is_kern());
            }
            RecordTopology::Manip { origins } => {
                clef = origins
                    .iter()
                    .map(|o| match o {
                        kern::ColumnOrigin::From(i) => clef[*i],
                        kern::ColumnOrigin::MergeOf(run) => clef[run[0]],
                    })
                    .collect();
            }
            RecordTopology::GlobalComment => {}
            RecordTopology::Plain => match rec.kind {
                RecordKind::TandemInterp => {
                    for (col, cell) in rec.cells.iter().enumerate() {
                        if cell.is_clef() {
                            clef[col].0 = true;
                        }
                    }
                }
                RecordKind::Data => {
                    for (col, info) in spines.cols.iter().enumerate() {
                        if info.is_kern() && !clef[col].0 && !clef[col].1 {
                            clef[col].1 = true;
                            missing_clef.push(reason(
                                "missing-clef",
                                line,
                                format!("kern spine {col} reaches data without a clef"),
                            ));
                        }
                    }
                }
                _ => {}
            },
        }
    }
    if spines.width() != 0 {
        reasons.push(reason(
            "missing-terminator",
            doc.records.len(),
            format!("{} spine(s) never reach \"*-\"", spines.width()),
        ));
    }
    if !saw_kern {
        reasons.push(reason("no-kern-spine", 1, "no **kern spine in document"));
    }
    reasons.extend(missing_clef);
}

/// The structural subset of the rule chain: UTF-8, parseable (including
/// record widths), and every spine terminated. This is the validity the
/// constraint engine guarantees.
pub fn structural_validity(bytes: &[u8]) -> bool {
    let Ok(doc) = parse_bytes(bytes, "structural") else {
        return false;
    };
    let mut spines = SpineState::new();
    for (i, rec) in doc.records.iter().enumerate() {
        if spines.apply(rec, i + 1).is_err() {
            return false;
        }
    }
    spines.width() == 0
}

/// A voice whose duration sum disagrees with the active time signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasureMismatch {
    pub measure: usize,
    pub voice: usize,
    pub expected: Rational,
    pub actual: Rational,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeasureCheckError {
    #[error("line {line}: data record with no time signature in effect")]
    NoTimeSignature { line: usize },
    #[error("line {line}: token duration cannot be computed")]
    TokenDuration { line: usize },
    #[error("line {line}: chord members disagree on duration")]
    ChordDurationMismatch { line: usize },
    #[error("line {line}: inconsistent spine structure")]
    InvalidStructure { line: usize },
}

/// Sum token durations per voice between consecutive barlines and compare
/// with the active `*M` signature. Pickup and final measures are exempt
/// when they undershoot. Spine splits check their sub-voices
/// independently; each inherits the pre-split accumulation.
pub fn check_measures(doc: &KernDocument) -> Result<Vec<MeasureMismatch>, MeasureCheckError> {
    let mut spines = SpineState::new();
    let mut acc: Vec<Rational> = Vec::new();
    let mut sig: Vec<Option<Rational>> = Vec::new();
    let mut measure = 0usize;
    let mut mismatches = Vec::new();
    let mut last_line = 0usize;

    for (i, rec) in doc.records.iter().enumerate() {
        let line = i + 1;
        last_line = line;
        let pre_cols = spines.cols.clone();
        let topo = spines
            .apply(rec, line)
            .map_err(|_| MeasureCheckError::InvalidStructure { line })?;
        match topo {
            RecordTopology::Introduced => {
                acc = vec![Rational::ZERO; spines.width()];
                sig = vec![None; spines.width()];
            }
            RecordTopology::Manip { origins } => {
                // A terminated voice ends its final measure here; flag it
                // when it overshoots (undershooting is final-bar slack).
                for (voice, cell) in rec.cells.iter().enumerate() {
                    let terminated = matches!(
                        &cell.payload,
                        CellPayload::Manipulator(crate::kern::Manipulator::Terminate)
                    );
                    if terminated && pre_cols[voice].is_kern() {
                        if let Some(expected) = sig[voice] {
                            if acc[voice] > expected {
                                mismatches.push(MeasureMismatch {
                                    measure,
                                    voice,
                                    expected,
                                    actual: acc[voice],
                                    line,
                                });
                            }
                        }
                    }
                }
                acc = origins
                    .iter()
                    .map(|o| match o {
                        kern::ColumnOrigin::From(i) => acc[*i],
                        kern::ColumnOrigin::MergeOf(run) => acc[run[0]],
                    })
                    .collect();
                sig = origins
                    .iter()
                    .map(|o| match o {
                        kern::ColumnOrigin::From(i) => sig[*i],
                        kern::ColumnOrigin::MergeOf(run) => sig[run[0]],
                    })
                    .collect();
            }
            RecordTopology::GlobalComment => {}
            RecordTopology::Plain => match rec.kind {
                RecordKind::TandemInterp => {
                    for (col, cell) in rec.cells.iter().enumerate() {
                        if let Some((num, den)) = cell.time_signature() {
                            if den != 0 {
                                sig[col] = Some(Rational::new(num as i64, den as i64));
                            }
                        }
                    }
                }
                RecordKind::Barline => {
                    for (voice, sum) in acc.iter().enumerate() {
                        if !spines.cols[voice].is_kern() {
                            continue;
                        }
                        let Some(expected) = sig[voice] else { continue };
                        let undershoot = *sum < expected;
                        let exempt = measure == 0 && undershoot;
                        if *sum != expected && !exempt {
                            mismatches.push(MeasureMismatch {
                                measure,
                                voice,
                                expected,
                                actual: *sum,
                                line,
                            });
                        }
                    }
                    measure += 1;
                    acc.iter_mut().for_each(|a| *a = Rational::ZERO);
                }
                RecordKind::Data => {
                    for (col, cell) in rec.cells.iter().enumerate() {
                        if !spines.cols[col].is_kern() {
                            continue;
                        }
                        if sig[col].is_none() {
                            return Err(MeasureCheckError::NoTimeSignature { line });
                        }
                        if let CellPayload::Data(DataCell::Notes(toks)) = &cell.payload {
                            acc[col] += chord_contribution(toks, line)?;
                            // No plausible measure needs this fine a grid;
                            // bounding it here keeps sums in i64 range.
                            if acc[col].denom() > 1 << 32 {
                                return Err(MeasureCheckError::TokenDuration { line });
                            }
                        }
                    }
                }
                _ => {}
            },
        }
    }

    // Final measure: exempt only when it undershoots.
    for (voice, sum) in acc.iter().enumerate() {
        if !spines.cols.get(voice).map(|c| c.is_kern()).unwrap_or(false) {
            continue;
        }
        let Some(expected) = sig[voice] else { continue };
        if *sum > expected {
            mismatches.push(MeasureMismatch {
                measure,
                voice,
                expected,
                actual: *sum,
                line: last_line,
            });
        }
    }
    Ok(mismatches)
}

/// Rhythmic contribution of one data cell: grace notes count zero, chords
/// contribute the shared duration of their members.
fn chord_contribution(toks: &[NoteToken], line: usize) -> Result<Rational, MeasureCheckError> {
    let mut value: Option<Rational> = None;
    for tok in toks {
        let dur = if tok.grace.is_empty() {
            kern::token_duration(tok).map_err(|_| MeasureCheckError::TokenDuration { line })?
        } else {
            Rational::ZERO
        };
        match value {
            None => value = Some(dur),
            Some(v) if v != dur => return Err(MeasureCheckError::ChordDurationMismatch { line }),
            Some(_) => {}
        }
    }
    Ok(value.unwrap_or(Rational::ZERO))
}
