//! Record classification and document assembly.

use super::token::NoteToken;
use super::{
    Cell, CellPayload, DataCell, KernDocument, Manipulator, Record, RecordKind, SpineState,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("line {line}: field count does not match the active spine count")]
    RecordWidthMismatch { line: usize },
    #[error("line {line}: record mixes cell kinds")]
    MixedRecordKind { line: usize },
    #[error("line {line}: malformed or misplaced exclusive interpretation")]
    UnknownExclusiveInterp { line: usize },
    #[error("line {line}: cannot lex data cell {cell:?}")]
    LexError { line: usize, cell: String },
}

/// Coarse cell class used for record homogeneity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coarse {
    Exclusive,
    Star,
    Comment,
    Barline,
    Data,
}

fn coarse_of(cell: &str) -> Coarse {
    if cell.starts_with("**") {
        Coarse::Exclusive
    } else if cell.starts_with('*') {
        Coarse::Star
    } else if cell.starts_with('!') {
        Coarse::Comment
    } else if cell.starts_with('=') {
        Coarse::Barline
    } else {
        Coarse::Data
    }
}

fn manipulator_of(cell: &str) -> Option<Manipulator> {
    match cell {
        "*" => Some(Manipulator::Stay),
        "*^" => Some(Manipulator::Split),
        "*v" => Some(Manipulator::Merge),
        "*-" => Some(Manipulator::Terminate),
        _ => None,
    }
}

/// Parse raw bytes, checking UTF-8 validity first.
pub fn parse_bytes(bytes: &[u8], source_name: &str) -> Result<KernDocument, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ParseError::NotUtf8)?;
    parse_document(text, source_name)
}

/// Parse `**kern` text into a document. Records are split on LF, cells on
/// TAB; spine topology is validated against the manipulator records.
pub fn parse_document(text: &str, source_name: &str) -> Result<KernDocument, ParseError> {
    let trailing_newline = text.ends_with('\n');
    let mut doc = KernDocument {
        records: Vec::new(),
        source_name: source_name.to_string(),
        trailing_newline,
    };
    if text.is_empty() {
        return Ok(doc);
    }
    let body = if trailing_newline {
        &text[..text.len() - 1]
    } else {
        text
    };
    let mut spines = SpineState::new();
    for (i, line) in body.split('\n').enumerate() {
        let lineno = i + 1;
        let record = classify_record(line, lineno, &spines)?;
        spines.apply(&record, lineno)?;
        doc.records.push(record);
    }
    Ok(doc)
}

fn classify_record(line: &str, lineno: usize, spines: &SpineState) -> Result<Record, ParseError> {
    if line.starts_with("!!") {
        return Ok(Record {
            kind: RecordKind::Comment,
            cells: vec![Cell::new(line, CellPayload::Comment)],
        });
    }
    let raw_cells: Vec<&str> = line.split('\t').collect();
    let first = coarse_of(raw_cells[0]);
    for cell in &raw_cells {
        if coarse_of(cell) != first {
            return Err(ParseError::MixedRecordKind { line: lineno });
        }
    }
    match first {
        Coarse::Exclusive => {
            let cells = raw_cells
                .iter()
                .map(|c| {
                    let name = &c[2..];
                    if name.is_empty() {
                        return Err(ParseError::UnknownExclusiveInterp { line: lineno });
                    }
                    Ok(Cell::new(
                        *c,
                        CellPayload::Exclusive {
                            name: name.to_string(),
                        },
                    ))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Record {
                kind: RecordKind::ExclusiveInterp,
                cells,
            })
        }
        Coarse::Star => {
            let has_manipulator = raw_cells
                .iter()
                .any(|c| matches!(manipulator_of(c), Some(m) if m != Manipulator::Stay));
            if has_manipulator {
                let cells = raw_cells
                    .iter()
                    .map(|c| match manipulator_of(c) {
                        Some(op) => Ok(Cell::new(*c, CellPayload::Manipulator(op))),
                        None => Err(ParseError::MixedRecordKind { line: lineno }),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Record {
                    kind: RecordKind::SpineManipulator,
                    cells,
                })
            } else {
                Ok(Record {
                    kind: RecordKind::TandemInterp,
                    cells: raw_cells
                        .iter()
                        .map(|c| Cell::new(*c, CellPayload::Tandem))
                        .collect(),
                })
            }
        }
        Coarse::Barline => Ok(Record {
            kind: RecordKind::Barline,
            cells: raw_cells
                .iter()
                .map(|c| Cell::new(*c, CellPayload::Barline))
                .collect(),
        }),
        Coarse::Comment => Ok(Record {
            kind: RecordKind::Comment,
            cells: raw_cells
                .iter()
                .map(|c| Cell::new(*c, CellPayload::Comment))
                .collect(),
        }),
        Coarse::Data => {
            // Width must be known before cells can be routed per column.
            if raw_cells.len() != spines.width() {
                return Err(ParseError::RecordWidthMismatch { line: lineno });
            }
            let cells = raw_cells
                .iter()
                .zip(spines.cols.iter())
                .map(|(c, col)| {
                    let payload = if *c == "." {
                        DataCell::Null
                    } else if col.is_kern() {
                        DataCell::Notes(lex_chord(c, lineno)?)
                    } else {
                        DataCell::Opaque
                    };
                    Ok(Cell::new(*c, CellPayload::Data(payload)))
                })
                .collect::<Result<Vec<_>, ParseError>>()?;
            Ok(Record {
                kind: RecordKind::Data,
                cells,
            })
        }
    }
}

fn lex_chord(cell: &str, lineno: usize) -> Result<Vec<NoteToken>, ParseError> {
    cell.split(' ')
        .map(|member| {
            NoteToken::lex(member).map_err(|_| ParseError::LexError {
                line: lineno,
                cell: cell.to_string(),
            })
        })
        .collect()
}
