//! Autoregressive decode simulation with pluggable logit sources, for
//! demonstrating and fuzzing the constraint engine's validity guarantee.

use crate::bpe::{BpeVocab, EOS_ID};
use crate::constraint::{ConstraintEngine, EngineError};
use crate::filter::structural_validity;
use serde::Serialize;
use thiserror::Error;

/// Deterministic 64-bit generator (splitmix); reproducible forever, no
/// external state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

/// Fixed adversarial preferences, each aimed at one global-state rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialRule {
    AlwaysTab,
    AlwaysNewline,
    AlwaysSplit,
    LongestFirst,
}

/// Where a simulated decoder gets its rankings from. Same seed, rule, or
/// sequence — same emissions.
#[derive(Debug, Clone)]
pub enum LogitSource {
    UniformRandom { seed: u64 },
    Adversarial(AdversarialRule),
    Replay(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminatedBy {
    Eos,
    MaxLength,
}

/// One simulated generation.
#[derive(Debug, Clone)]
pub struct DecodeRun {
    pub tokens: Vec<u32>,
    pub terminated_by: TerminatedBy,
    /// Structural validity (UTF-8, parseable, widths, terminators) of the
    /// decoded bytes.
    pub valid: bool,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("vocabulary and engine disagree on size")]
    VocabMismatch,
    #[error("replay token {id} at step {step} was masked")]
    ReplayBlocked { step: usize, id: u32 },
    /// The vocabulary offers no continuation for a live state. Cannot
    /// happen with a trained vocabulary (the byte alphabet is complete);
    /// hand-built vocabularies may omit needed bytes.
    #[error("no vocabulary token can continue the prefix at step {step}")]
    DeadEnd { step: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

enum Picker {
    Random(SplitMix64),
    Preference(Vec<u32>),
    Replay(Vec<u32>),
}

impl Picker {
    fn new(source: &LogitSource, vocab: &BpeVocab) -> Picker {
        match source {
            LogitSource::UniformRandom { seed } => Picker::Random(SplitMix64::new(*seed)),
            LogitSource::Adversarial(rule) => Picker::Preference(preference_order(*rule, vocab)),
            LogitSource::Replay(ids) => Picker::Replay(ids.clone()),
        }
    }
}

fn preference_order(rule: AdversarialRule, vocab: &BpeVocab) -> Vec<u32> {
    let ids: Vec<u32> = (0..vocab.len() as u32).collect();
    let find = |bytes: &[u8]| {
        ids.iter()
            .copied()
            .find(|&id| vocab.token_bytes(id) == Some(bytes))
    };
    let mut order: Vec<u32> = Vec::with_capacity(ids.len());
    match rule {
        AdversarialRule::AlwaysTab => order.extend(find(b"\t")),
        AdversarialRule::AlwaysNewline => order.extend(find(b"\n")),
        AdversarialRule::AlwaysSplit => order.extend(find(b"*^")),
        AdversarialRule::LongestFirst => {
            let mut by_len = ids.clone();
            by_len.sort_by_key(|&id| {
                (
                    std::cmp::Reverse(vocab.token_bytes(id).map(|b| b.len()).unwrap_or(0)),
                    id,
                )
            });
            order.extend(by_len);
        }
    }
    for id in ids {
        if !order.contains(&id) {
            order.push(id);
        }
    }
    order
}

/// Greedy decode: argmax over (logits + mask) when constrained, plain
/// argmax otherwise; stops at end-of-sequence or `max_length` tokens.
pub fn run_decode(
    source: &LogitSource,
    vocab: &BpeVocab,
    engine: &ConstraintEngine,
    constrained: bool,
    max_length: usize,
) -> Result<DecodeRun, HarnessError> {
    if vocab.len() != engine.vocab_len() {
        return Err(HarnessError::VocabMismatch);
    }
    let mut picker = Picker::new(source, vocab);
    let mut state = engine.init_state();
    let mut tokens = Vec::new();
    let terminated_by = loop {
        if tokens.len() >= max_length {
            break TerminatedBy::MaxLength;
        }
        let step = tokens.len();
        let id = if constrained {
            let mask = engine.compute_mask(&state);
            match &mut picker {
                Picker::Random(rng) => {
                    let n = mask.count_allowed();
                    if n == 0 {
                        return Err(HarnessError::DeadEnd { step });
                    }
                    mask.nth_allowed(rng.below(n)).expect("allowed id")
                }
                Picker::Preference(order) => *order
                    .iter()
                    .find(|&&id| mask.is_allowed(id))
                    .ok_or(HarnessError::DeadEnd { step })?,
                Picker::Replay(ids) => {
                    let id = ids.get(step).copied().unwrap_or(EOS_ID);
                    if !mask.is_allowed(id) {
                        return Err(HarnessError::ReplayBlocked { step, id });
                    }
                    id
                }
            }
        } else {
            match &mut picker {
                Picker::Random(rng) => rng.below(vocab.len()) as u32,
                Picker::Preference(order) => order[0],
                Picker::Replay(ids) => ids.get(step).copied().unwrap_or(EOS_ID),
            }
        };
        if id == EOS_ID {
            break TerminatedBy::Eos;
        }
        if constrained {
            state = engine.advance(&state, id)?;
        }
        tokens.push(id);
    };
    let bytes = vocab.decode_bytes(&tokens).unwrap_or_default();
    let valid = structural_validity(&bytes);
    Ok(DecodeRun {
        tokens,
        terminated_by,
        valid,
        bytes,
    })
}

/// Length blowup and repetition summary over a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopStats {
    pub runs: usize,
    /// Fraction of runs longer than four times their target length.
    pub loop_fraction: f64,
    /// Largest window repeated back-to-back in any run.
    pub max_window: usize,
}

pub fn loop_stats(runs: &[DecodeRun], target_lengths: &[usize]) -> LoopStats {
    let n = runs.len().min(target_lengths.len());
    if runs.is_empty() {
        return LoopStats {
            runs: 0,
            loop_fraction: 0.0,
            max_window: 0,
        };
    }
    let exceeding = runs
        .iter()
        .zip(target_lengths)
        .filter(|(run, &target)| run.tokens.len() > 4 * target)
        .count();
    let max_window = runs
        .iter()
        .map(|r| max_repeated_window(&r.tokens))
        .max()
        .unwrap_or(0);
    LoopStats {
        runs: runs.len(),
        loop_fraction: if n == 0 {
            0.0
        } else {
            exceeding as f64 / n as f64
        },
        max_window,
    }
}

/// Largest `w` such that some position repeats its `w`-token window
/// immediately; 0 when nothing repeats.
pub fn max_repeated_window(tokens: &[u32]) -> usize {
    for w in (1..=tokens.len() / 2).rev() {
        for i in 0..=tokens.len() - 2 * w {
            if tokens[i..i + w] == tokens[i + w..i + 2 * w] {
                return w;
            }
        }
    }
    0
}
