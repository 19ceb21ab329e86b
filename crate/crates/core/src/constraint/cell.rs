//! Byte-level automaton over single cells of the decode grammar.
//!
//! The grammar accepts canonical normal-form output only: exclusive cells
//! are the literal `**kern`, star cells resolve to null / split / merge /
//! terminate / opaque tandem text, barlines are `=` plus printable text,
//! and data tokens follow the canonical component rank order with no
//! unknown residue. Every reachable state can be completed into a valid
//! document, which keeps mask computation a pure transition check.

use crate::kern::rank;

/// Component-class automaton for one note token. `class` is the rank of
/// the most recent component; transitions never move backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct TokenState {
    pub class: u8,
    /// Pitch letter, `b'r'` for rests, 0 before the pitch slot is filled.
    pub pitch: u8,
    pub acc_char: u8,
    pub acc_count: u8,
}

impl TokenState {
    fn start(class: u8, pitch: u8) -> Self {
        TokenState {
            class,
            pitch,
            acc_char: 0,
            acc_count: 0,
        }
    }

    pub fn complete(&self) -> bool {
        self.class >= rank::PITCH
    }

    /// Feed one byte; `None` when the byte cannot extend a canonical token.
    pub fn step(&self, b: u8) -> Option<TokenState> {
        let mut next = *self;
        match b {
            b'0'..=b'9' => {
                if self.class > rank::DIGITS {
                    return None;
                }
                next.class = rank::DIGITS;
            }
            b'.' => {
                if self.class > rank::DOTS {
                    return None;
                }
                next.class = rank::DOTS;
            }
            b'q' => {
                if self.class > rank::GRACE_Q {
                    return None;
                }
                next.class = rank::GRACE_Q;
            }
            b'Q' => {
                if self.class > rank::GRACE_UQ {
                    return None;
                }
                next.class = rank::GRACE_UQ;
            }
            b'a'..=b'g' | b'A'..=b'G' => {
                if self.class < rank::PITCH {
                    next.class = rank::PITCH;
                    next.pitch = b;
                } else if self.class == rank::PITCH && self.pitch == b && b != b'r' {
                    // homogeneous run of one letter
                } else {
                    return None;
                }
            }
            b'r' => {
                if self.class >= rank::PITCH {
                    return None;
                }
                next.class = rank::PITCH;
                next.pitch = b'r';
            }
            b'#' | b'-' | b'n' => {
                if self.class < rank::PITCH || self.class > rank::ACCIDENTAL {
                    return None;
                }
                if self.class == rank::ACCIDENTAL {
                    if self.acc_char != b || self.acc_count >= 2 {
                        return None;
                    }
                    next.acc_count += 1;
                } else {
                    next.class = rank::ACCIDENTAL;
                    next.acc_char = b;
                    next.acc_count = 1;
                }
            }
            b'[' => next.enter(self, rank::TIE_OPEN)?,
            b'_' => next.enter(self, rank::TIE_CONT)?,
            b']' => next.enter(self, rank::TIE_CLOSE)?,
            b')' => next.enter(self, rank::SLUR_CLOSE)?,
            b'\'' | b'`' | b'~' | b'^' | b';' => {
                next.enter(self, rank::artic_rank(b).expect("artic byte"))?
            }
            b'L' | b'J' | b'K' | b'k' => {
                next.enter(self, rank::beam_rank(b).expect("beam byte"))?
            }
            b'/' | b'\\' => {
                // A token carries at most one stem direction.
                if self.class < rank::PITCH || self.class >= rank::STEM {
                    return None;
                }
                next.class = rank::STEM;
            }
            b'(' => next.enter(self, rank::SLUR_OPEN)?,
            _ => return None,
        }
        Some(next)
    }

    fn enter(&mut self, prev: &TokenState, class: u8) -> Option<()> {
        if prev.class < rank::PITCH || prev.class > class {
            return None;
        }
        self.class = class;
        Some(())
    }
}

/// Star-family cell shapes, classified on completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum StarCell {
    /// `*` so far — a null interpretation if it ends here.
    JustStar,
    /// `*^` so far — a split if it ends here, tandem text if it grows.
    Caret,
    /// `*v` so far.
    Vee,
    /// `*-` so far.
    Dash,
    /// Committed tandem text.
    Body,
}

/// Position inside the current cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum CellState {
    /// No byte of the cell yet (right after a TAB).
    Fresh,
    /// Prefix of the literal `**kern` (length 1..=6).
    Excl {
        matched: u8,
    },
    Star(StarCell),
    /// `=` plus any printable tail.
    Bar,
    /// Only dots so far in the current chord member; `first` marks the
    /// first member, where a single dot may complete as a null cell.
    Dots {
        n: u8,
        first: bool,
    },
    Token(TokenState),
    /// A space was consumed; the next chord member has not started.
    AwaitMember,
}

pub(crate) fn is_data_start(b: u8) -> bool {
    matches!(b, b'0'..=b'9' | b'.' | b'q' | b'Q' | b'a'..=b'g' | b'A'..=b'G' | b'r')
}

fn printable(b: u8) -> bool {
    (0x20..=0x7e).contains(&b)
}

/// Record classes as the decoder discovers them. Star records stay
/// `StarUndecided` while only null cells have completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum RecordProgress {
    Exclusive,
    StarUndecided,
    StarTandem,
    StarManip,
    Barline,
    Data,
}

const EXCL_PATTERN: &[u8; 6] = b"**kern";

/// Feed one non-TAB, non-LF byte into the current cell.
pub(crate) fn cell_step(kind: RecordProgress, cell: CellState, b: u8) -> Option<CellState> {
    match (kind, cell) {
        (RecordProgress::Exclusive, CellState::Fresh) => {
            (b == EXCL_PATTERN[0]).then_some(CellState::Excl { matched: 1 })
        }
        (RecordProgress::Exclusive, CellState::Excl { matched }) => {
            let m = matched as usize;
            (m < 6 && b == EXCL_PATTERN[m]).then_some(CellState::Excl {
                matched: matched + 1,
            })
        }
        (
            RecordProgress::StarUndecided | RecordProgress::StarTandem | RecordProgress::StarManip,
            cell,
        ) => star_step(kind, cell, b),
        (RecordProgress::Barline, CellState::Fresh) => (b == b'=').then_some(CellState::Bar),
        (RecordProgress::Barline, CellState::Bar) => {
            (printable(b) && b != b' ').then_some(CellState::Bar)
        }
        (RecordProgress::Data, cell) => data_step(cell, b),
        _ => None,
    }
}

fn star_step(kind: RecordProgress, cell: CellState, b: u8) -> Option<CellState> {
    let manip = kind == RecordProgress::StarManip;
    match cell {
        CellState::Fresh => (b == b'*').then_some(CellState::Star(StarCell::JustStar)),
        CellState::Star(StarCell::JustStar) => match b {
            b'^' => Some(CellState::Star(StarCell::Caret)),
            b'v' => Some(CellState::Star(StarCell::Vee)),
            b'-' => Some(CellState::Star(StarCell::Dash)),
            // No exclusive interpretations mid-document.
            b'*' => None,
            _ if printable(b) && !manip => Some(CellState::Star(StarCell::Body)),
            _ => None,
        },
        CellState::Star(StarCell::Caret | StarCell::Vee | StarCell::Dash) => {
            (printable(b) && !manip).then_some(CellState::Star(StarCell::Body))
        }
        CellState::Star(StarCell::Body) => printable(b).then_some(CellState::Star(StarCell::Body)),
        _ => None,
    }
}

fn data_step(cell: CellState, b: u8) -> Option<CellState> {
    match cell {
        CellState::Fresh | CellState::AwaitMember => {
            let first = matches!(cell, CellState::Fresh);
            match b {
                b'.' => Some(CellState::Dots { n: 1, first }),
                b' ' => None,
                _ => member_start(b),
            }
        }
        CellState::Dots { n, first } => match b {
            b'.' => Some(CellState::Dots {
                n: n.saturating_add(1),
                first,
            }),
            // Dots never precede duration digits in canonical order, and a
            // null placeholder cannot be a chord member.
            b'0'..=b'9' | b' ' => None,
            _ => member_start(b),
        },
        CellState::Token(t) => {
            if b == b' ' {
                return t.complete().then_some(CellState::AwaitMember);
            }
            t.step(b).map(CellState::Token)
        }
        _ => None,
    }
}

fn member_start(b: u8) -> Option<CellState> {
    let tok = match b {
        b'0'..=b'9' => TokenState::start(rank::DIGITS, 0),
        b'q' => TokenState::start(rank::GRACE_Q, 0),
        b'Q' => TokenState::start(rank::GRACE_UQ, 0),
        b'a'..=b'g' | b'A'..=b'G' => TokenState::start(rank::PITCH, b),
        b'r' => TokenState::start(rank::PITCH, b'r'),
        _ => return None,
    };
    Some(CellState::Token(tok))
}

/// Whether the cell may be closed by TAB or LF right now.
pub(crate) fn cell_complete(cell: CellState) -> bool {
    match cell {
        CellState::Fresh | CellState::AwaitMember => false,
        CellState::Excl { matched } => matched == 6,
        CellState::Star(_) => true,
        CellState::Bar => true,
        CellState::Dots { n, first } => first && n == 1,
        CellState::Token(t) => t.complete(),
    }
}

/// What a completed cell contributes to the next record's width, and how
/// it refines the record class. `None` when the completion would violate
/// record homogeneity.
pub(crate) struct CellDone {
    pub kind: RecordProgress,
    pub width_add: u32,
    pub is_merge: bool,
}

pub(crate) fn classify_completed(
    kind: RecordProgress,
    cell: CellState,
    prev_merge: bool,
) -> Option<CellDone> {
    let done = |kind, width_add, is_merge| {
        Some(CellDone {
            kind,
            width_add,
            is_merge,
        })
    };
    match (kind, cell) {
        (RecordProgress::Exclusive, CellState::Excl { matched: 6 }) => {
            done(RecordProgress::Exclusive, 1, false)
        }
        (
            k @ (RecordProgress::StarUndecided
            | RecordProgress::StarTandem
            | RecordProgress::StarManip),
            CellState::Star(s),
        ) => match s {
            StarCell::JustStar => done(k, 1, false),
            StarCell::Caret if k != RecordProgress::StarTandem => {
                done(RecordProgress::StarManip, 2, false)
            }
            // Adjacent merge cells collapse into one column.
            StarCell::Vee if k != RecordProgress::StarTandem => done(
                RecordProgress::StarManip,
                if prev_merge { 0 } else { 1 },
                true,
            ),
            StarCell::Dash if k != RecordProgress::StarTandem => {
                done(RecordProgress::StarManip, 0, false)
            }
            StarCell::Body if k != RecordProgress::StarManip => {
                done(RecordProgress::StarTandem, 1, false)
            }
            _ => None,
        },
        (RecordProgress::Barline, CellState::Bar) => done(RecordProgress::Barline, 1, false),
        (RecordProgress::Data, cell) if cell_complete(cell) => done(RecordProgress::Data, 1, false),
        _ => None,
    }
}
