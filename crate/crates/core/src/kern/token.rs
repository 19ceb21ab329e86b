//! Lexing and re-emission of `**kern` data tokens.
//!
//! A data token packs duration, pitch, and modifier characters into one
//! string, in arbitrary order depending on which upstream converter wrote
//! the file. The lexer buckets every character by class and keeps anything
//! it does not understand in `unknown_trailing`, so lexing never loses
//! bytes. Canonical re-emission (used by the normalizer) writes the
//! classes back in a fixed rank order.

use crate::rational::Rational;
use thiserror::Error;

/// Fixed emission order for token components. Lower rank prints first.
/// Within a class, characters print in the listed order.
pub(crate) mod rank {
    pub const DIGITS: u8 = 1;
    pub const DOTS: u8 = 2;
    pub const GRACE_Q: u8 = 3;
    pub const GRACE_UQ: u8 = 4;
    pub const PITCH: u8 = 5;
    pub const ACCIDENTAL: u8 = 6;
    pub const TIE_OPEN: u8 = 7;
    pub const TIE_CONT: u8 = 8;
    pub const TIE_CLOSE: u8 = 9;
    pub const SLUR_CLOSE: u8 = 10;
    pub const ARTIC_BASE: u8 = 11; // ' ` ~ ^ ; occupy 11..=15
    pub const BEAM_BASE: u8 = 16; // L J K k occupy 16..=19
    pub const STEM: u8 = 20;
    pub const SLUR_OPEN: u8 = 21;

    pub const ARTICS: [u8; 5] = *b"'`~^;";
    pub const BEAMS: [u8; 4] = *b"LJKk";

    pub fn artic_rank(b: u8) -> Option<u8> {
        ARTICS
            .iter()
            .position(|&a| a == b)
            .map(|i| ARTIC_BASE + i as u8)
    }

    pub fn beam_rank(b: u8) -> Option<u8> {
        BEAMS
            .iter()
            .position(|&a| a == b)
            .map(|i| BEAM_BASE + i as u8)
    }
}

/// One decomposed `**kern` data token (a single note, rest, or garbage
/// preserved verbatim). `raw` holds the exact source spelling; it is only
/// rewritten by the normalizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteToken {
    pub raw: String,
    /// Duration digits exactly as written ("" when absent, "0" = breve).
    pub duration_digits: String,
    pub dots: u32,
    /// Grace markers in written order (characters `q`/`Q`).
    pub grace: String,
    /// Pitch letters in written order; valid tokens repeat one letter.
    pub pitch_letters: String,
    pub rest: bool,
    /// Accidental run in written order over `#`, `-`, `n`.
    pub accidental: String,
    pub tie_open: u32,
    pub tie_continue: u32,
    pub tie_close: u32,
    pub slur_open: u32,
    pub slur_close: u32,
    /// Beam characters in written order over `L`, `J`, `K`, `k`.
    pub beams: String,
    /// Articulations in written order over `'`, `` ` ``, `~`, `^`, `;`.
    pub articulations: String,
    pub stem: Option<char>,
    /// Characters the lexer does not model, preserved verbatim.
    pub unknown_trailing: String,
}

impl NoteToken {
    fn empty(raw: &str) -> Self {
        NoteToken {
            raw: raw.to_string(),
            duration_digits: String::new(),
            dots: 0,
            grace: String::new(),
            pitch_letters: String::new(),
            rest: false,
            accidental: String::new(),
            tie_open: 0,
            tie_continue: 0,
            tie_close: 0,
            slur_open: 0,
            slur_close: 0,
            beams: String::new(),
            articulations: String::new(),
            stem: None,
            unknown_trailing: String::new(),
        }
    }

    /// Lex one chord member. Errors when the token is empty or carries
    /// neither a pitch run nor a rest flag (or both at once).
    pub fn lex(text: &str) -> Result<NoteToken, TokenLexError> {
        if text.is_empty() {
            return Err(TokenLexError::Empty);
        }
        let mut tok = NoteToken::empty(text);
        for ch in text.chars() {
            match ch {
                '0'..='9' => tok.duration_digits.push(ch),
                '.' => tok.dots += 1,
                'q' | 'Q' => tok.grace.push(ch),
                'a'..='g' | 'A'..='G' => tok.pitch_letters.push(ch),
                'r' => {
                    if tok.rest {
                        tok.unknown_trailing.push(ch);
                    } else {
                        tok.rest = true;
                    }
                }
                '#' | '-' | 'n' => tok.accidental.push(ch),
                '[' => tok.tie_open += 1,
                '_' => tok.tie_continue += 1,
                ']' => tok.tie_close += 1,
                '(' => tok.slur_open += 1,
                ')' => tok.slur_close += 1,
                'L' | 'J' | 'K' | 'k' => tok.beams.push(ch),
                '\'' | '`' | '~' | '^' | ';' => tok.articulations.push(ch),
                '/' | '\\' => {
                    if tok.stem.is_some() {
                        tok.unknown_trailing.push(ch);
                    } else {
                        tok.stem = Some(ch);
                    }
                }
                other => tok.unknown_trailing.push(other),
            }
        }
        match (tok.pitch_letters.is_empty(), tok.rest) {
            (true, false) => Err(TokenLexError::NoPitchOrRest),
            (false, true) => Err(TokenLexError::PitchAndRest),
            _ => Ok(tok),
        }
    }

    /// Re-emit the token in canonical rank order. Order within each class
    /// follows the frozen rank table; written order inside the duration,
    /// pitch, and accidental strings is preserved.
    pub fn canonical_text(&self) -> String {
        let mut out = String::with_capacity(self.raw.len());
        out.push_str(&self.duration_digits);
        for _ in 0..self.dots {
            out.push('.');
        }
        let mut grace: Vec<char> = self.grace.chars().collect();
        grace.sort_by_key(|&c| if c == 'q' { 0 } else { 1 });
        out.extend(grace);
        if self.rest {
            out.push('r');
        } else {
            out.push_str(&self.pitch_letters);
        }
        out.push_str(&self.accidental);
        for _ in 0..self.tie_open {
            out.push('[');
        }
        for _ in 0..self.tie_continue {
            out.push('_');
        }
        for _ in 0..self.tie_close {
            out.push(']');
        }
        for _ in 0..self.slur_close {
            out.push(')');
        }
        for &a in &rank::ARTICS {
            for c in self.articulations.chars() {
                if c as u8 == a {
                    out.push(c);
                }
            }
        }
        for &b in &rank::BEAMS {
            for c in self.beams.chars() {
                if c as u8 == b {
                    out.push(c);
                }
            }
        }
        if let Some(s) = self.stem {
            out.push(s);
        }
        for _ in 0..self.slur_open {
            out.push('(');
        }
        out.push_str(&self.unknown_trailing);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenLexError {
    #[error("empty token")]
    Empty,
    #[error("token has neither pitch letters nor a rest flag")]
    NoPitchOrRest,
    #[error("token mixes pitch letters with a rest flag")]
    PitchAndRest,
}

/// A pitch resolved from kern octave spelling. `c` is middle C
/// (semitone 60); each extra lowercase letter raises an octave, each
/// extra uppercase letter lowers one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pitch {
    pub semitone: i32,
    pub spelling: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PitchError {
    #[error("token is not a note")]
    NotANote,
    #[error("corrupted octave spelling {0:?}")]
    MixedCasePitch(String),
}

fn pitch_class(letter: char) -> i32 {
    match letter.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => unreachable!("lexer admits a-g only"),
    }
}

/// Resolve the written pitch of a note token.
pub fn pitch_of(tok: &NoteToken) -> Result<Pitch, PitchError> {
    if tok.rest || tok.pitch_letters.is_empty() {
        return Err(PitchError::NotANote);
    }
    let letters: Vec<char> = tok.pitch_letters.chars().collect();
    let first = letters[0];
    if letters.iter().any(|&c| c != first) {
        return Err(PitchError::MixedCasePitch(tok.pitch_letters.clone()));
    }
    let count = letters.len() as i32;
    let octave = if first.is_ascii_lowercase() {
        4 + (count - 1)
    } else {
        3 - (count - 1)
    };
    let mut semitone = (octave + 1) * 12 + pitch_class(first);
    for c in tok.accidental.chars() {
        match c {
            '#' => semitone += 1,
            '-' => semitone -= 1,
            _ => {}
        }
    }
    Ok(Pitch {
        semitone,
        spelling: format!("{}{}", tok.pitch_letters, tok.accidental),
    })
}

/// Three distinct accidental families in one token cannot be repaired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccidentalConflict;

/// Resolve a conflicting accidental run. When a sharp-or-flat group and a
/// natural group both appear, the last-written group wins; a run with at
/// most one family is kept verbatim. A sharp/flat mix without a natural is
/// left alone (the filter rejects it).
pub(crate) fn repair_accidental_run(acc: &str) -> Result<String, AccidentalConflict> {
    let mut families = [false; 3]; // #, -, n
    let mut groups: Vec<String> = Vec::new();
    for c in acc.chars() {
        let idx = match c {
            '#' => 0,
            '-' => 1,
            'n' => 2,
            _ => continue,
        };
        families[idx] = true;
        match groups.last_mut() {
            Some(g) if g.starts_with(c) => g.push(c),
            _ => groups.push(c.to_string()),
        }
    }
    if families.iter().filter(|&&f| f).count() == 3 {
        return Err(AccidentalConflict);
    }
    let sharp_or_flat = families[0] || families[1];
    if sharp_or_flat && families[2] {
        Ok(groups.pop().unwrap_or_default())
    } else {
        Ok(acc.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DurationError {
    #[error("token has no duration digits")]
    NoDuration,
    #[error("duration digits {0:?} out of range")]
    DigitsOutOfRange(String),
    #[error("too many augmentation dots ({0})")]
    ExcessiveDots(u32),
}

const MAX_DOTS: u32 = 8;
/// Real notation stops at 256th notes; anything past this is corrupt.
const MAX_RECIPROCAL: u32 = 2048;

/// Duration of a token as a fraction of a whole note: `(1/d)·(2 − 2^−dots)`
/// for written digits `d > 0`; digits `0` denote a breve (2 whole notes).
pub fn token_duration(tok: &NoteToken) -> Result<Rational, DurationError> {
    if tok.duration_digits.is_empty() {
        return Err(DurationError::NoDuration);
    }
    let d: u32 = tok
        .duration_digits
        .parse()
        .ok()
        .filter(|&d| d <= MAX_RECIPROCAL)
        .ok_or_else(|| DurationError::DigitsOutOfRange(tok.duration_digits.clone()))?;
    if tok.dots > MAX_DOTS {
        return Err(DurationError::ExcessiveDots(tok.dots));
    }
    let base = if d == 0 {
        Rational::from_integer(2)
    } else {
        Rational::new(1, d as i64)
    };
    // 2 − 2^−dots == (2^(dots+1) − 1) / 2^dots
    let pow = 1i64 << tok.dots;
    Ok(base * Rational::new(2 * pow - 1, pow))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lex_plain_note() {
        let t = NoteToken::lex("4c").unwrap();
        assert_eq!(t.duration_digits, "4");
        assert_eq!(t.pitch_letters, "c");
        assert!(!t.rest);
        assert_eq!(t.canonical_text(), "4c");
    }

    #[test]
    fn lex_shuffled_components() {
        // Tie and beam written before the body still land in their buckets.
        let t = NoteToken::lex("[8fJ").unwrap();
        assert_eq!(t.duration_digits, "8");
        assert_eq!(t.tie_open, 1);
        assert_eq!(t.beams, "J");
        assert_eq!(t.canonical_text(), "8f[J");
        let u = NoteToken::lex("8fJ[").unwrap();
        assert_eq!(u.canonical_text(), "8f[J");
    }

    #[test]
    fn lex_rejects_unclassifiable() {
        assert_eq!(NoteToken::lex(""), Err(TokenLexError::Empty));
        assert_eq!(NoteToken::lex("4"), Err(TokenLexError::NoPitchOrRest));
        assert_eq!(NoteToken::lex("yy"), Err(TokenLexError::NoPitchOrRest));
        assert_eq!(NoteToken::lex("4cr"), Err(TokenLexError::PitchAndRest));
    }

    #[test]
    fn unknown_characters_preserved() {
        let t = NoteToken::lex("4cy").unwrap();
        assert_eq!(t.unknown_trailing, "y");
        assert_eq!(t.canonical_text(), "4cy");
        let u = NoteToken::lex("4rr").unwrap();
        assert!(u.rest);
        assert_eq!(u.unknown_trailing, "r");
    }

    #[test]
    fn articulation_rank_order() {
        // Independent oracle: sort characters by (class, rank) and compare.
        let t = NoteToken::lex(";4c'").unwrap();
        assert_eq!(t.canonical_text(), "4c';");
        let mut chars: Vec<char> = ";4c'".chars().collect();
        chars.sort_by_key(|&c| match c {
            '0'..='9' => (rank::DIGITS, 0),
            'a'..='g' => (rank::PITCH, 0),
            _ => (rank::artic_rank(c as u8).unwrap(), 0),
        });
        let oracle: String = chars.into_iter().collect();
        assert_eq!(t.canonical_text(), oracle);
    }

    #[test]
    fn pitch_convention_anchor() {
        let c4 = pitch_of(&NoteToken::lex("4c").unwrap()).unwrap();
        assert_eq!(c4.semitone, 60);
        let cc_sharp = pitch_of(&NoteToken::lex("4cc#").unwrap()).unwrap();
        assert_eq!(cc_sharp.semitone, 73);
        let low = pitch_of(&NoteToken::lex("4CC").unwrap()).unwrap();
        assert_eq!(low.semitone, 36);
        let flat = pitch_of(&NoteToken::lex("4B--").unwrap()).unwrap();
        assert_eq!(flat.semitone, 57);
    }

    #[test]
    fn pitch_rejects_corrupted_spelling() {
        let t = NoteToken::lex("4Cc").unwrap();
        assert!(matches!(pitch_of(&t), Err(PitchError::MixedCasePitch(_))));
        let u = NoteToken::lex("4ce").unwrap();
        assert!(matches!(pitch_of(&u), Err(PitchError::MixedCasePitch(_))));
        let r = NoteToken::lex("4r").unwrap();
        assert_eq!(pitch_of(&r), Err(PitchError::NotANote));
    }

    #[test]
    fn duration_formula() {
        let quarter = token_duration(&NoteToken::lex("4c").unwrap()).unwrap();
        assert_eq!(quarter, Rational::new(1, 4));
        let dotted = token_duration(&NoteToken::lex("4.c").unwrap()).unwrap();
        assert_eq!(dotted, Rational::new(3, 8));
        let breve = token_duration(&NoteToken::lex("0c").unwrap()).unwrap();
        assert_eq!(breve, Rational::from_integer(2));
        assert_eq!(
            token_duration(&NoteToken::lex("c").unwrap()),
            Err(DurationError::NoDuration)
        );
    }

    #[test]
    fn accidental_repair_last_group_wins() {
        assert_eq!(repair_accidental_run("#n"), Ok("n".to_string()));
        assert_eq!(repair_accidental_run("n#"), Ok("#".to_string()));
        assert_eq!(repair_accidental_run("#"), Ok("#".to_string()));
        assert_eq!(repair_accidental_run("##"), Ok("##".to_string()));
        assert_eq!(repair_accidental_run(""), Ok(String::new()));
        // Sharp/flat mix without a natural is not repairable here.
        assert_eq!(repair_accidental_run("#-"), Ok("#-".to_string()));
        assert_eq!(repair_accidental_run("#n-"), Err(AccidentalConflict));
    }

    #[test]
    fn duration_matches_dotted_sum_oracle() {
        // 1/d + 1/2d + ... + 1/(2^dots · d), for d in powers of two.
        for exp in 0..=6u32 {
            let d = 1u32 << exp;
            for dots in 0..=2u32 {
                let text = format!("{}{}c", d, ".".repeat(dots as usize));
                let got = token_duration(&NoteToken::lex(&text).unwrap()).unwrap();
                let mut oracle = Rational::ZERO;
                for k in 0..=dots {
                    oracle += Rational::new(1, (d as i64) << k);
                }
                assert_eq!(got, oracle, "d={d} dots={dots}");
            }
        }
    }
}
