//! Lossless parsing and serialization of Humdrum `**kern` text.
//!
//! A document is a grid: records (LF-separated rows) over spines
//! (TAB-separated columns). Spines are introduced by exclusive
//! interpretations (`**kern`), reshaped by manipulators (`*^` split,
//! `*v` merge, `*-` terminate), and carry tandem metadata (`*clefG2`),
//! barlines, and data cells. Every cell keeps its raw source text, so
//! `serialize(parse(x)) == x` byte-for-byte.

mod parse;
mod token;

pub use parse::{parse_bytes, parse_document, ParseError};
pub use token::{
    pitch_of, token_duration, AccidentalConflict, DurationError, NoteToken, Pitch, PitchError,
    TokenLexError,
};

pub(crate) use token::{rank, repair_accidental_run};

/// Record classes; all cells of one record share the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    ExclusiveInterp,
    TandemInterp,
    SpineManipulator,
    Barline,
    Data,
    Comment,
}

/// Spine-path operations carried by manipulator cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Manipulator {
    /// `*^` — split one spine into two.
    Split,
    /// `*v` — merge with adjacent marked spines.
    Merge,
    /// `*-` — terminate the spine.
    Terminate,
    /// `*` — no change for this spine.
    Stay,
}

/// Content of a data cell in one spine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataCell {
    /// `.` — placeholder keeping voices aligned.
    Null,
    /// One or more space-separated note tokens (a chord when several).
    Notes(Vec<NoteToken>),
    /// Data in a non-`**kern` spine (lyrics, dynamics); kept verbatim.
    Opaque,
}

/// Parsed form of one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellPayload {
    Exclusive { name: String },
    Tandem,
    Manipulator(Manipulator),
    Barline,
    Data(DataCell),
    Comment,
}

/// One TAB-delimited field: raw text plus its parsed form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub raw: String,
    pub payload: CellPayload,
}

impl Cell {
    pub(crate) fn new(raw: impl Into<String>, payload: CellPayload) -> Self {
        Cell {
            raw: raw.into(),
            payload,
        }
    }

    /// Time-signature denominator pair when this is a `*M<num>/<den>` cell.
    pub fn time_signature(&self) -> Option<(u32, u32)> {
        let body = self.raw.strip_prefix("*M")?;
        let (num, den) = body.split_once('/')?;
        if num.is_empty() || den.is_empty() {
            return None;
        }
        if !num.bytes().all(|b| b.is_ascii_digit()) || !den.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some((num.parse().ok()?, den.parse().ok()?))
    }

    /// Mensuration text when this is a `*met(...)` cell.
    pub fn mensuration(&self) -> Option<&str> {
        self.raw.strip_prefix("*met(")?.strip_suffix(')')
    }

    pub fn is_clef(&self) -> bool {
        self.raw.starts_with("*clef")
    }

    pub fn is_key_signature(&self) -> bool {
        self.raw.starts_with("*k[")
    }
}

/// One row of the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub kind: RecordKind,
    pub cells: Vec<Cell>,
}

impl Record {
    /// Global comments (`!!`) span the whole line as a single cell and are
    /// exempt from spine-width accounting.
    pub fn is_global_comment(&self) -> bool {
        self.kind == RecordKind::Comment
            && self.cells.len() == 1
            && self.cells[0].raw.starts_with("!!")
    }
}

/// A parsed `**kern` score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernDocument {
    pub records: Vec<Record>,
    pub source_name: String,
    /// Whether the source ended with a final LF; preserved by serialization.
    pub trailing_newline: bool,
}

impl KernDocument {
    pub fn serialize(&self) -> String {
        serialize_document(self)
    }
}

/// Emit TAB-separated cells and LF-terminated records. Byte-identical to
/// the source for documents produced by the parser.
pub fn serialize_document(doc: &KernDocument) -> String {
    let mut out = String::new();
    for (i, rec) in doc.records.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (j, cell) in rec.cells.iter().enumerate() {
            if j > 0 {
                out.push('\t');
            }
            out.push_str(&cell.raw);
        }
    }
    if doc.trailing_newline {
        out.push('\n');
    }
    out
}

/// Metadata for one active spine column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ColumnInfo {
    pub exclusive: String,
}

impl ColumnInfo {
    pub fn is_kern(&self) -> bool {
        self.exclusive == "kern"
    }
}

/// Where each post-manipulator column came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ColumnOrigin {
    /// Kept or one half of a split of the old column.
    From(usize),
    /// Merge of an adjacent run of old columns (leftmost first).
    MergeOf(Vec<usize>),
}

/// What a record did to the spine topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum RecordTopology {
    GlobalComment,
    Introduced,
    Plain,
    Manip { origins: Vec<ColumnOrigin> },
}

/// Incremental spine accounting. Drives parsing validation and every
/// downstream per-column walk (filtering, stripping, event extraction).
#[derive(Debug, Clone, Default)]
pub(crate) struct SpineState {
    pub cols: Vec<ColumnInfo>,
    pub introduced: bool,
}

impl SpineState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    /// Validate one record against the current topology and apply its
    /// effects. Effects of manipulator records apply to later records.
    pub fn apply(&mut self, rec: &Record, line: usize) -> Result<RecordTopology, ParseError> {
        if rec.is_global_comment() {
            return Ok(RecordTopology::GlobalComment);
        }
        if rec.kind == RecordKind::ExclusiveInterp {
            if self.introduced {
                return Err(ParseError::UnknownExclusiveInterp { line });
            }
            self.cols = rec
                .cells
                .iter()
                .map(|c| {
                    let name = match &c.payload {
                        CellPayload::Exclusive { name } => name.clone(),
                        _ => String::new(),
                    };
                    ColumnInfo { exclusive: name }
                })
                .collect();
            self.introduced = true;
            return Ok(RecordTopology::Introduced);
        }
        if rec.cells.len() != self.cols.len() {
            return Err(ParseError::RecordWidthMismatch { line });
        }
        if rec.kind != RecordKind::SpineManipulator {
            return Ok(RecordTopology::Plain);
        }

        let mut next: Vec<ColumnInfo> = Vec::with_capacity(self.cols.len() + 1);
        let mut origins: Vec<ColumnOrigin> = Vec::with_capacity(self.cols.len() + 1);
        let mut merge_run: Vec<usize> = Vec::new();
        let flush_run = |run: &mut Vec<usize>,
                         next: &mut Vec<ColumnInfo>,
                         origins: &mut Vec<ColumnOrigin>,
                         cols: &Vec<ColumnInfo>| {
            if !run.is_empty() {
                next.push(cols[run[0]].clone());
                origins.push(ColumnOrigin::MergeOf(std::mem::take(run)));
            }
        };
        for (i, cell) in rec.cells.iter().enumerate() {
            let op = match &cell.payload {
                CellPayload::Manipulator(op) => *op,
                _ => Manipulator::Stay,
            };
            if op != Manipulator::Merge {
                flush_run(&mut merge_run, &mut next, &mut origins, &self.cols);
            }
            match op {
                Manipulator::Stay => {
                    next.push(self.cols[i].clone());
                    origins.push(ColumnOrigin::From(i));
                }
                Manipulator::Split => {
                    next.push(self.cols[i].clone());
                    origins.push(ColumnOrigin::From(i));
                    next.push(self.cols[i].clone());
                    origins.push(ColumnOrigin::From(i));
                }
                Manipulator::Terminate => {}
                Manipulator::Merge => merge_run.push(i),
            }
        }
        flush_run(&mut merge_run, &mut next, &mut origins, &self.cols);
        self.cols = next;
        Ok(RecordTopology::Manip { origins })
    }
}
