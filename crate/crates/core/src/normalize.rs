//! Canonical normal form: map every accepted document to a unique
//! spelling so one rendered score corresponds to one token sequence.
//!
//! The pipeline applies a fixed, ordered pass list. The list, the token
//! component ranks, and the metadata equivalence table are conventions
//! frozen by this crate: any deterministic, idempotent ordering that
//! collapses the known ambiguous spellings would do, and this is the one
//! we ship. Applying the pipeline to its own output makes zero edits.

use crate::kern::{
    pitch_of, repair_accidental_run, AccidentalConflict, Cell, CellPayload, DataCell, KernDocument,
    Manipulator, NoteToken, Record, RecordKind, RecordTopology, SpineState,
};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Ordered pass identifiers, also the keys of [`NormalizationTrace`].
pub const PASSES: [&str; 11] = [
    "01-strip-spines",
    "02-strip-comments",
    "03-strip-grace-rests",
    "04-dedupe-timesigs",
    "05-repair-accidentals",
    "06-remove-zero-ties",
    "07-strip-residue",
    "08-sort-tokens",
    "09-sort-chords",
    "10-repad-nulls",
    "11-renumber-manipulators",
];

/// Edits applied per pass. All zeros when the input was already normal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NormalizationTrace {
    pub counts: BTreeMap<&'static str, u64>,
}

impl NormalizationTrace {
    fn new() -> Self {
        NormalizationTrace {
            counts: PASSES.iter().map(|&p| (p, 0)).collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.total() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NormalizeError {
    #[error("pass {pass} cannot produce a valid token at line {line}")]
    NormalizationConflict { pass: &'static str, line: usize },
    #[error("no **kern spine remains")]
    EmptyDocument,
    #[error("line {line}: inconsistent spine structure")]
    InvalidStructure { line: usize },
}

/// Apply the full ordered pass list. The output is a fixed point: a
/// second application reports zero edits and serializes identically.
pub fn normalize_document(
    doc: &KernDocument,
) -> Result<(KernDocument, NormalizationTrace), NormalizeError> {
    let mut out = doc.clone();
    let mut trace = NormalizationTrace::new();
    let passes: [(&'static str, PassFn); 11] = [
        ("01-strip-spines", pass_strip_spines),
        ("02-strip-comments", pass_strip_comments),
        ("03-strip-grace-rests", pass_strip_grace_rests),
        ("04-dedupe-timesigs", pass_dedupe_timesigs),
        ("05-repair-accidentals", pass_repair_accidentals),
        ("06-remove-zero-ties", pass_remove_zero_ties),
        ("07-strip-residue", pass_strip_residue),
        ("08-sort-tokens", pass_sort_tokens),
        ("09-sort-chords", pass_sort_chords),
        ("10-repad-nulls", pass_repad_nulls),
        ("11-renumber-manipulators", pass_renumber_manipulators),
    ];
    for (id, pass) in passes {
        let edits = pass(&mut out)?;
        *trace.counts.get_mut(id).expect("pass registered") += edits;
    }
    Ok((out, trace))
}

type PassFn = fn(&mut KernDocument) -> Result<u64, NormalizeError>;

/// Re-emit one token with its components in canonical rank order.
pub fn sort_token(tok: &NoteToken) -> NoteToken {
    let mut out = tok.clone();
    out.raw = tok.canonical_text();
    out
}

/// Order chord notes by ascending pitch; ties keep written order.
pub fn sort_chord(notes: &[NoteToken]) -> Vec<NoteToken> {
    let mut out = notes.to_vec();
    out.sort_by_key(|t| pitch_of(t).map(|p| p.semitone).unwrap_or(i32::MIN));
    out
}

/// Collapse a conflicting accidental run; the repaired token is re-emitted
/// canonically.
pub fn repair_accidentals(tok: &NoteToken) -> Result<NoteToken, AccidentalConflict> {
    let repaired = repair_accidental_run(&tok.accidental)?;
    let mut out = tok.clone();
    out.accidental = repaired;
    out.raw = out.canonical_text();
    Ok(out)
}

/// Remove every column whose exclusive interpretation is not `**kern`.
pub fn strip_nonkern_spines(doc: &KernDocument) -> Result<KernDocument, NormalizeError> {
    let mut out = doc.clone();
    pass_strip_spines(&mut out)?;
    Ok(out)
}

/// Remove notation that has no visual counterpart: comments, grace rests
/// (and rows left all-null by their removal), redundant equivalent time
/// signatures, and zero-length ties.
pub fn strip_nonvisual(doc: &KernDocument) -> Result<KernDocument, NormalizeError> {
    let mut out = doc.clone();
    pass_strip_comments(&mut out)?;
    pass_strip_grace_rests(&mut out)?;
    pass_dedupe_timesigs(&mut out)?;
    pass_remove_zero_ties(&mut out)?;
    Ok(out)
}

fn walk_error(line: usize) -> NormalizeError {
    NormalizeError::InvalidStructure { line }
}

fn pass_strip_spines(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    let mut spines = SpineState::new();
    let mut edits = 0u64;
    let mut kept: Vec<Record> = Vec::with_capacity(doc.records.len());

    let any_kern = doc.records.iter().any(|r| {
        r.kind == RecordKind::ExclusiveInterp
            && r.cells
                .iter()
                .any(|c| matches!(&c.payload, CellPayload::Exclusive { name } if name == "kern"))
    });
    if !any_kern {
        return Err(NormalizeError::EmptyDocument);
    }

    for (i, rec) in doc.records.iter().enumerate() {
        let line = i + 1;
        let pre_cols = spines.cols.clone();
        let topo = spines.apply(rec, line).map_err(|_| walk_error(line))?;
        let keep: Vec<bool> = match &topo {
            RecordTopology::GlobalComment => {
                kept.push(rec.clone());
                continue;
            }
            RecordTopology::Introduced => rec
                .cells
                .iter()
                .map(|c| matches!(&c.payload, CellPayload::Exclusive { name } if name == "kern"))
                .collect(),
            _ => pre_cols.iter().map(|c| c.is_kern()).collect(),
        };
        if keep.iter().all(|&k| k) {
            kept.push(rec.clone());
            continue;
        }
        edits += keep.iter().filter(|&&k| !k).count() as u64;
        let cells: Vec<Cell> = rec
            .cells
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(c, _)| c.clone())
            .collect();
        if cells.is_empty() {
            continue; // record carried no kern content at all
        }
        kept.push(Record {
            kind: rec.kind,
            cells,
        });
    }
    doc.records = kept;
    Ok(edits)
}

fn pass_strip_comments(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    let before = doc.records.len();
    doc.records.retain(|r| r.kind != RecordKind::Comment);
    Ok((before - doc.records.len()) as u64)
}

fn pass_strip_grace_rests(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    let mut edits = 0u64;
    for rec in &mut doc.records {
        if rec.kind != RecordKind::Data {
            continue;
        }
        for cell in &mut rec.cells {
            let CellPayload::Data(DataCell::Notes(toks)) = &mut cell.payload else {
                continue;
            };
            let before = toks.len();
            toks.retain(|t| !(t.rest && !t.grace.is_empty()));
            if toks.len() != before {
                edits += (before - toks.len()) as u64;
                if toks.is_empty() {
                    cell.payload = CellPayload::Data(DataCell::Null);
                    cell.raw = ".".to_string();
                } else {
                    cell.raw = join_members(toks);
                }
            }
        }
    }
    // Rows that carry no event at all are non-visual noise.
    let before = doc.records.len();
    doc.records.retain(|r| {
        r.kind != RecordKind::Data
            || r.cells
                .iter()
                .any(|c| !matches!(&c.payload, CellPayload::Data(DataCell::Null)))
    });
    edits += (before - doc.records.len()) as u64;
    Ok(edits)
}

/// Equivalence table between mensuration signs and fraction meters.
/// Only the common pairs are mapped.
fn met_equivalent(met: &str) -> Option<(u32, u32)> {
    match met {
        "c" => Some((4, 4)),
        "c|" => Some((2, 2)),
        _ => None,
    }
}

/// Drop `*met(...)` cells whose fraction equivalent also appears as a
/// `*M` cell anywhere in the document. The check is document-wide: staves
/// share meter in this corpus, and a column-exact scan would buy nothing.
fn pass_dedupe_timesigs(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    let mut meters: Vec<(u32, u32)> = Vec::new();
    for rec in &doc.records {
        if rec.kind != RecordKind::TandemInterp {
            continue;
        }
        for cell in &rec.cells {
            if let Some(sig) = cell.time_signature() {
                meters.push(sig);
            }
        }
    }
    let mut edits = 0u64;
    for rec in &mut doc.records {
        if rec.kind != RecordKind::TandemInterp {
            continue;
        }
        for cell in &mut rec.cells {
            let redundant = cell
                .mensuration()
                .and_then(met_equivalent)
                .map(|sig| meters.contains(&sig))
                .unwrap_or(false);
            if redundant {
                cell.raw = "*".to_string();
                edits += 1;
            }
        }
    }
    Ok(edits)
}

fn pass_repair_accidentals(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    for_each_token(doc, |tok, line| {
        let repaired = repair_accidental_run(&tok.accidental).map_err(|_| {
            NormalizeError::NormalizationConflict {
                pass: "05-repair-accidentals",
                line,
            }
        })?;
        if repaired != tok.accidental {
            tok.accidental = repaired;
            tok.raw = tok.canonical_text();
            return Ok(true);
        }
        Ok(false)
    })
}

fn pass_remove_zero_ties(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    for_each_token(doc, |tok, _| {
        if tok.tie_open > 0 && tok.tie_close > 0 {
            let cancel = tok.tie_open.min(tok.tie_close);
            tok.tie_open -= cancel;
            tok.tie_close -= cancel;
            tok.raw = tok.canonical_text();
            return Ok(true);
        }
        Ok(false)
    })
}

fn pass_strip_residue(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    for_each_token(doc, |tok, _| {
        if !tok.unknown_trailing.is_empty() {
            tok.unknown_trailing.clear();
            tok.raw = tok.canonical_text();
            return Ok(true);
        }
        Ok(false)
    })
}

fn pass_sort_tokens(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    for_each_token(doc, |tok, _| {
        let canonical = tok.canonical_text();
        if tok.raw != canonical {
            tok.raw = canonical;
            return Ok(true);
        }
        Ok(false)
    })
}

fn pass_sort_chords(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    let mut edits = 0u64;
    for rec in &mut doc.records {
        if rec.kind != RecordKind::Data {
            continue;
        }
        for cell in &mut rec.cells {
            let CellPayload::Data(DataCell::Notes(toks)) = &mut cell.payload else {
                continue;
            };
            if toks.len() < 2 {
                continue;
            }
            let sorted = sort_chord(toks);
            if sorted != *toks {
                *toks = sorted;
                cell.raw = join_members(toks);
                edits += 1;
            }
        }
    }
    Ok(edits)
}

fn pass_repad_nulls(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    let mut edits = 0u64;
    for rec in &mut doc.records {
        if rec.kind != RecordKind::Data {
            continue;
        }
        for cell in &mut rec.cells {
            if cell.raw.is_empty() {
                cell.raw = ".".to_string();
                cell.payload = CellPayload::Data(DataCell::Null);
                edits += 1;
            }
        }
    }
    if !doc.trailing_newline && !doc.records.is_empty() {
        doc.trailing_newline = true;
        edits += 1;
    }
    Ok(edits)
}

fn pass_renumber_manipulators(doc: &mut KernDocument) -> Result<u64, NormalizeError> {
    let mut edits = 0u64;
    for rec in &mut doc.records {
        if rec.kind != RecordKind::SpineManipulator {
            continue;
        }
        // A merge run of length one is a topology no-op; spell it "*".
        let ops: Vec<Manipulator> = rec
            .cells
            .iter()
            .map(|c| match &c.payload {
                CellPayload::Manipulator(op) => *op,
                _ => Manipulator::Stay,
            })
            .collect();
        for i in 0..ops.len() {
            let lone = ops[i] == Manipulator::Merge
                && (i == 0 || ops[i - 1] != Manipulator::Merge)
                && (i + 1 >= ops.len() || ops[i + 1] != Manipulator::Merge);
            if lone {
                rec.cells[i] = Cell::new("*", CellPayload::Manipulator(Manipulator::Stay));
                edits += 1;
            }
        }
    }
    let before = doc.records.len();
    doc.records.retain(|r| match r.kind {
        RecordKind::SpineManipulator => r
            .cells
            .iter()
            .any(|c| !matches!(&c.payload, CellPayload::Manipulator(Manipulator::Stay))),
        RecordKind::TandemInterp => r.cells.iter().any(|c| c.raw != "*"),
        _ => true,
    });
    edits += (before - doc.records.len()) as u64;
    Ok(edits)
}

fn join_members(toks: &[NoteToken]) -> String {
    toks.iter()
        .map(|t| t.raw.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Apply `f` to every note token in kern data cells; `f` reports whether
/// it edited the token. Cell raws are rebuilt when members change.
fn for_each_token<F>(doc: &mut KernDocument, mut f: F) -> Result<u64, NormalizeError>
where
    F: FnMut(&mut NoteToken, usize) -> Result<bool, NormalizeError>,
{
    let mut edits = 0u64;
    for (i, rec) in doc.records.iter_mut().enumerate() {
        if rec.kind != RecordKind::Data {
            continue;
        }
        for cell in &mut rec.cells {
            let CellPayload::Data(DataCell::Notes(toks)) = &mut cell.payload else {
                continue;
            };
            let mut changed = false;
            for tok in toks.iter_mut() {
                if f(tok, i + 1)? {
                    changed = true;
                    edits += 1;
                }
            }
            if changed {
                cell.raw = join_members(toks);
            }
        }
    }
    Ok(edits)
}
