//! Incremental validity engine for constrained decoding.
//!
//! Given a decode prefix, [`ConstraintEngine::compute_mask`] marks every
//! vocabulary token whose bytes cannot extend the prefix toward a formally
//! valid document: UTF-8, parseable records, consistent line width, and
//! terminated spines. Grammar liveness is byte-local; the global state a
//! cell grammar cannot express (active spine count, fields emitted,
//! pending splits and merges) lives in [`DecodeState`].
//!
//! Restrictions documented here on purpose: the grammar covers printable
//! ASCII only, exclusive cells are fixed to the literal `**kern`, comment
//! records are not generatable, and new spines cannot be introduced
//! mid-document. Normal-form output never uses any of those, so every
//! normalized file replays mask-clean.

mod cell;

use crate::bpe::{BpeVocab, BOS_ID, EOS_ID};
use cell::{
    cell_complete, cell_step, classify_completed, is_data_start, CellState, RecordProgress,
};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum DocPhase {
    /// Nothing emitted yet; the first record must introduce `**kern` spines.
    BeforeFirstRecord,
    Body,
    /// All spines terminated; only end-of-sequence remains.
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct InRecord {
    kind: RecordProgress,
    cell: CellState,
    /// TABs consumed in this record.
    tabs: u32,
    /// Folded width of the next record from completed cells so far.
    width_next: u32,
    /// Whether the previously completed cell was a merge.
    prev_merge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum LineState {
    AtStart,
    In(InRecord),
}

/// Constraint-engine state between tokens. Cheap to clone and hash; the
/// engine memoizes mask bodies per equivalent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecodeState {
    doc: DocPhase,
    line: LineState,
    active_spines: u32,
}

impl DecodeState {
    pub fn active_spines(&self) -> u32 {
        self.active_spines
    }

    /// Fields begun on the current record (completed cells plus the one in
    /// progress).
    pub fn fields_in_record(&self) -> u32 {
        match &self.line {
            LineState::AtStart => 0,
            LineState::In(r) => r.tabs + u32::from(r.cell != CellState::Fresh),
        }
    }

    pub fn terminated(&self) -> bool {
        self.doc == DocPhase::Terminated
    }

    /// Pending record class, once the first byte has committed one.
    pub fn record_kind(&self) -> Option<&'static str> {
        match &self.line {
            LineState::AtStart => None,
            LineState::In(r) => Some(match r.kind {
                RecordProgress::Exclusive => "exclusive",
                RecordProgress::StarUndecided => "interpretation",
                RecordProgress::StarTandem => "tandem",
                RecordProgress::StarManip => "manipulator",
                RecordProgress::Barline => "barline",
                RecordProgress::Data => "data",
            }),
        }
    }

    /// Spine count the current record will leave behind, folded from the
    /// manipulator cells completed so far.
    pub fn pending_spines(&self) -> Option<u32> {
        match &self.line {
            LineState::AtStart => None,
            LineState::In(r) => Some(r.width_next),
        }
    }
}

/// Allowed-token bitset over vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    bits: Vec<u64>,
    len: usize,
}

impl TokenMask {
    fn allow(&mut self, id: u32) {
        let id = id as usize;
        debug_assert!(id < self.len);
        self.bits[id / 64] |= 1 << (id % 64);
    }

    pub fn is_allowed(&self, id: u32) -> bool {
        let id = id as usize;
        id < self.len && (self.bits[id / 64] >> (id % 64)) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count_allowed(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn allowed_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len as u32).filter(|&id| self.is_allowed(id))
    }

    /// `k`-th allowed id in ascending order.
    pub fn nth_allowed(&self, k: usize) -> Option<u32> {
        self.allowed_ids().nth(k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("token {id} was masked and cannot be advanced")]
    IllegalAdvance { id: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokenKind {
    Special,
    /// Contains TAB or LF; legality depends on width counters.
    PerCall(Vec<u8>),
    /// Whitespace-free (or space-only) bytes; legality depends only on the
    /// cell grammar position.
    Cacheable(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MaskKey {
    doc: DocPhase,
    line: Option<(RecordProgress, CellState)>,
}

/// Shared, read-only mask engine for one vocabulary.
pub struct ConstraintEngine {
    tokens: Vec<TokenKind>,
    cache: Mutex<HashMap<MaskKey, Arc<Vec<u64>>>>,
}

impl ConstraintEngine {
    pub fn new(vocab: &BpeVocab) -> Self {
        let tokens = (0..vocab.len() as u32)
            .map(|id| match vocab.token_bytes(id) {
                None => TokenKind::Special,
                Some(bytes) => {
                    if bytes.iter().any(|&b| b == b'\t' || b == b'\n') {
                        TokenKind::PerCall(bytes.to_vec())
                    } else {
                        TokenKind::Cacheable(bytes.to_vec())
                    }
                }
            })
            .collect();
        ConstraintEngine {
            tokens,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.tokens.len()
    }

    /// State expecting an exclusive-interpretation record first.
    pub fn init_state(&self) -> DecodeState {
        DecodeState {
            doc: DocPhase::BeforeFirstRecord,
            line: LineState::AtStart,
            active_spines: 0,
        }
    }

    /// Feed one byte. `None` when no valid document extends the prefix
    /// this way.
    fn advance_byte(&self, s: &DecodeState, b: u8) -> Option<DecodeState> {
        match s.doc {
            DocPhase::Terminated => None,
            DocPhase::BeforeFirstRecord | DocPhase::Body => match s.line {
                LineState::AtStart => self.start_record(s, b),
                LineState::In(rec) => match b {
                    b'\t' => self.close_cell_tab(s, rec),
                    b'\n' => self.close_record(s, rec),
                    _ => {
                        let cell = cell_step(rec.kind, rec.cell, b)?;
                        Some(DecodeState {
                            line: LineState::In(InRecord { cell, ..rec }),
                            ..*s
                        })
                    }
                },
            },
        }
    }

    fn start_record(&self, s: &DecodeState, b: u8) -> Option<DecodeState> {
        let kind = if s.doc == DocPhase::BeforeFirstRecord {
            if b != b'*' {
                return None;
            }
            RecordProgress::Exclusive
        } else {
            match b {
                b'*' => RecordProgress::StarUndecided,
                b'=' => RecordProgress::Barline,
                _ if is_data_start(b) => RecordProgress::Data,
                _ => return None,
            }
        };
        let cell = cell_step(kind, CellState::Fresh, b)?;
        Some(DecodeState {
            line: LineState::In(InRecord {
                kind,
                cell,
                tabs: 0,
                width_next: 0,
                prev_merge: false,
            }),
            ..*s
        })
    }

    fn close_cell_tab(&self, s: &DecodeState, rec: InRecord) -> Option<DecodeState> {
        if !cell_complete(rec.cell) {
            return None;
        }
        // Width is fixed by the active spine count except on the very
        // first record, which defines it.
        if s.doc == DocPhase::Body && rec.tabs + 1 >= s.active_spines {
            return None;
        }
        let done = classify_completed(rec.kind, rec.cell, rec.prev_merge)?;
        Some(DecodeState {
            line: LineState::In(InRecord {
                kind: done.kind,
                cell: CellState::Fresh,
                tabs: rec.tabs + 1,
                width_next: rec.width_next + done.width_add,
                prev_merge: done.is_merge,
            }),
            ..*s
        })
    }

    fn close_record(&self, s: &DecodeState, rec: InRecord) -> Option<DecodeState> {
        if !cell_complete(rec.cell) {
            return None;
        }
        if s.doc == DocPhase::Body && rec.tabs + 1 != s.active_spines {
            return None;
        }
        let done = classify_completed(rec.kind, rec.cell, rec.prev_merge)?;
        let width = rec.width_next + done.width_add;
        Some(DecodeState {
            doc: if width == 0 {
                DocPhase::Terminated
            } else {
                DocPhase::Body
            },
            line: LineState::AtStart,
            active_spines: width,
        })
    }

    /// Feed a byte string (used for prefix replay and token simulation).
    pub fn advance_bytes(&self, state: &DecodeState, bytes: &[u8]) -> Option<DecodeState> {
        let mut s = *state;
        for &b in bytes {
            s = self.advance_byte(&s, b)?;
        }
        Some(s)
    }

    /// Advance by one vocabulary token. The token must be mask-allowed;
    /// feeding a masked token is a programming error surfaced as
    /// [`EngineError::IllegalAdvance`].
    pub fn advance(&self, state: &DecodeState, id: u32) -> Result<DecodeState, EngineError> {
        match self.tokens.get(id as usize) {
            None => Err(EngineError::IllegalAdvance { id }),
            Some(TokenKind::Special) => {
                if id == EOS_ID && state.terminated() {
                    Ok(*state)
                } else {
                    Err(EngineError::IllegalAdvance { id })
                }
            }
            Some(TokenKind::PerCall(bytes)) | Some(TokenKind::Cacheable(bytes)) => self
                .advance_bytes(state, bytes)
                .ok_or(EngineError::IllegalAdvance { id }),
        }
    }

    fn mask_key(state: &DecodeState) -> MaskKey {
        MaskKey {
            doc: state.doc,
            line: match state.line {
                LineState::AtStart => None,
                LineState::In(r) => Some((r.kind, r.cell)),
            },
        }
    }

    /// Allowed-token mask for the current state. Pure with respect to the
    /// state; token verdicts whose legality is independent of the width
    /// counters are memoized across calls and streams.
    pub fn compute_mask(&self, state: &DecodeState) -> TokenMask {
        let key = Self::mask_key(state);
        let body = {
            let cache = self.cache.lock().expect("mask cache");
            cache.get(&key).cloned()
        };
        let body = match body {
            Some(b) => b,
            None => {
                let mut bits = vec![0u64; self.tokens.len().div_ceil(64)];
                for (id, tok) in self.tokens.iter().enumerate() {
                    if let TokenKind::Cacheable(bytes) = tok {
                        if self.advance_bytes(state, bytes).is_some() {
                            bits[id / 64] |= 1 << (id % 64);
                        }
                    }
                }
                let arc = Arc::new(bits);
                self.cache
                    .lock()
                    .expect("mask cache")
                    .insert(key, arc.clone());
                arc
            }
        };
        let mut mask = TokenMask {
            bits: body.as_ref().clone(),
            len: self.tokens.len(),
        };
        for (id, tok) in self.tokens.iter().enumerate() {
            match tok {
                TokenKind::PerCall(bytes) => {
                    if self.advance_bytes(state, bytes).is_some() {
                        mask.allow(id as u32);
                    }
                }
                TokenKind::Special => {
                    if id as u32 == EOS_ID && state.terminated() {
                        mask.allow(id as u32);
                    }
                }
                TokenKind::Cacheable(_) => {}
            }
        }
        debug_assert!(!mask.is_allowed(BOS_ID));
        mask
    }
}
