//! Transcription metrics: character error rate and a normalized edit
//! distance over musical symbols gated by temporal position.

use crate::kern::{
    token_duration, Cell, CellPayload, ColumnOrigin, DataCell, KernDocument, NoteToken, RecordKind,
    RecordTopology, SpineState,
};
use crate::rational::Rational;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Note,
    Rest,
    Barline,
    Clef,
    Timesig,
    Keysig,
}

/// One musical symbol, positioned by measure ordinal and whole-note offset
/// from the measure start.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolEvent {
    pub measure: usize,
    pub offset: Rational,
    pub kind: SymbolKind,
    /// Canonical attribute string: `spelling|duration|ties|grace` for
    /// notes, the duration for rests, the tandem text for clefs and
    /// signatures, the raw cell for barlines.
    pub attrs: String,
}

/// Match counts and the normalized distance
/// `(inserted + deleted) / (|ref| + |pred|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cer: Option<f64>,
    pub omr_ned: Rational,
    pub matched: usize,
    pub inserted: usize,
    pub deleted: usize,
}

impl MetricReport {
    /// Percentage with the conventional two-decimal rounding.
    pub fn omr_ned_percent(&self) -> f64 {
        (self.omr_ned.to_f64() * 10_000.0).round() / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference is empty but prediction is not")]
    EmptyReference,
    #[error("line {line}: token duration cannot be computed")]
    NoDuration { line: usize },
    #[error("line {line}: inconsistent spine structure")]
    InvalidStructure { line: usize },
}

/// Character-level Levenshtein distance divided by reference length.
pub fn cer(reference: &str, prediction: &str) -> Result<f64, MetricError> {
    let ref_chars: Vec<char> = reference.chars().collect();
    let pred_chars: Vec<char> = prediction.chars().collect();
    if ref_chars.is_empty() {
        return if pred_chars.is_empty() {
            Ok(0.0)
        } else {
            Err(MetricError::EmptyReference)
        };
    }
    Ok(levenshtein(&ref_chars, &pred_chars) as f64 / ref_chars.len() as f64)
}

/// Two-row dynamic program.
fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(diag + 1).min(row[j] + 1);
        }
    }
    row[b.len()]
}

fn note_attrs(tok: &NoteToken, dur: Rational) -> String {
    let mut ties = String::new();
    for _ in 0..tok.tie_open {
        ties.push('[');
    }
    for _ in 0..tok.tie_continue {
        ties.push('_');
    }
    for _ in 0..tok.tie_close {
        ties.push(']');
    }
    format!(
        "{}{}|{}|{}|{}",
        tok.pitch_letters, tok.accidental, dur, ties, tok.grace
    )
}

fn tandem_event(cell: &Cell) -> Option<(SymbolKind, String)> {
    let body = cell.raw.strip_prefix('*')?;
    if cell.is_clef() {
        Some((SymbolKind::Clef, body.to_string()))
    } else if cell.time_signature().is_some() || cell.mensuration().is_some() {
        Some((SymbolKind::Timesig, body.to_string()))
    } else if cell.is_key_signature() {
        Some((SymbolKind::Keysig, body.to_string()))
    } else {
        None
    }
}

fn member_duration(tok: &NoteToken, line: usize) -> Result<Rational, MetricError> {
    if tok.grace.is_empty() {
        token_duration(tok).map_err(|_| MetricError::NoDuration { line })
    } else {
        Ok(Rational::ZERO)
    }
}

/// Walk each voice accumulating offsets from token durations. Chords
/// expand to one event per member at the same offset; null placeholders
/// contribute nothing; clef/meter/key tandems land at offset zero of the
/// measure that follows them; barline records mark the start of the
/// measure they open.
pub fn extract_events(doc: &KernDocument) -> Result<Vec<SymbolEvent>, MetricError> {
    let mut spines = SpineState::new();
    let mut offsets: Vec<Rational> = Vec::new();
    let mut measure = 0usize;
    let mut data_since_barline = false;
    let mut events = Vec::new();

    for (i, rec) in doc.records.iter().enumerate() {
        let line = i + 1;
        let topo = spines
            .apply(rec, line)
            .map_err(|_| MetricError::InvalidStructure { line })?;
        match topo {
            RecordTopology::Introduced => {
                offsets = vec![Rational::ZERO; spines.width()];
            }
            RecordTopology::Manip { origins } => {
                offsets = origins
                    .iter()
                    .map(|o| match o {
                        ColumnOrigin::From(i) => offsets[*i],
                        ColumnOrigin::MergeOf(run) => offsets[run[0]],
                    })
                    .collect();
            }
            RecordTopology::GlobalComment => {}
            RecordTopology::Plain => match rec.kind {
                RecordKind::TandemInterp => {
                    let event_measure = if data_since_barline {
                        measure + 1
                    } else {
                        measure
                    };
                    for cell in &rec.cells {
                        if let Some((kind, attrs)) = tandem_event(cell) {
                            events.push(SymbolEvent {
                                measure: event_measure,
                                offset: Rational::ZERO,
                                kind,
                                attrs,
                            });
                        }
                    }
                }
                RecordKind::Barline => {
                    measure += 1;
                    data_since_barline = false;
                    offsets.iter_mut().for_each(|o| *o = Rational::ZERO);
                    events.push(SymbolEvent {
                        measure,
                        offset: Rational::ZERO,
                        kind: SymbolKind::Barline,
                        attrs: rec.cells[0].raw.clone(),
                    });
                }
                RecordKind::Data => {
                    data_since_barline = true;
                    for (col, cell) in rec.cells.iter().enumerate() {
                        let CellPayload::Data(DataCell::Notes(toks)) = &cell.payload else {
                            continue;
                        };
                        let offset = offsets[col];
                        for tok in toks {
                            let dur = member_duration(tok, line)?;
                            let (kind, attrs) = if tok.rest {
                                (SymbolKind::Rest, dur.to_string())
                            } else {
                                (SymbolKind::Note, note_attrs(tok, dur))
                            };
                            events.push(SymbolEvent {
                                measure,
                                offset,
                                kind,
                                attrs,
                            });
                        }
                        // The voice advances by the chord's shared duration.
                        offsets[col] += member_duration(&toks[0], line)?;
                        // Same grid bound as the measure checker.
                        if offsets[col].denom() > 1 << 32 {
                            return Err(MetricError::NoDuration { line });
                        }
                    }
                }
                _ => {}
            },
        }
    }
    Ok(events)
}

/// Greedy exact matching of symbol multisets: a pair matches iff measure,
/// offset, kind, and attrs are all equal; the remainder counts as
/// insertions (prediction side) and deletions (reference side).
pub fn omr_ned(
    reference: &KernDocument,
    prediction: &KernDocument,
) -> Result<MetricReport, MetricError> {
    let ref_events = extract_events(reference)?;
    let pred_events = extract_events(prediction)?;

    let mut table: HashMap<&SymbolEvent, (usize, usize)> = HashMap::new();
    for e in &ref_events {
        table.entry(e).or_default().0 += 1;
    }
    for e in &pred_events {
        table.entry(e).or_default().1 += 1;
    }
    let matched: usize = table.values().map(|&(r, p)| r.min(p)).sum();
    let inserted = pred_events.len() - matched;
    let deleted = ref_events.len() - matched;
    let total = ref_events.len() + pred_events.len();
    let omr = if total == 0 {
        Rational::ZERO
    } else {
        Rational::new((inserted + deleted) as i64, total as i64)
    };

    let cer_value = cer(&reference.serialize(), &prediction.serialize()).ok();
    Ok(MetricReport {
        cer: cer_value,
        omr_ned: omr,
        matched,
        inserted,
        deleted,
    })
}
