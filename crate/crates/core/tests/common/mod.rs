//! Seeded generator of valid `**kern` documents for property testing.
//!
//! Every generated document passes the corpus filter. "Dirty" features
//! (shuffled token components, unsorted chords, redundant meters, grace
//! rests, residue characters, comments) are legal inputs that the
//! normalizer is expected to clean, never filter rejections.

// Each test binary uses its own slice of this module.
#![allow(dead_code)]

use kernforge::harness::SplitMix64;
use kernforge::Rational;

pub struct DocGen {
    rng: SplitMix64,
    pub dirty: bool,
}

#[derive(Clone)]
struct VoiceEvent {
    onset: Rational,
    /// 0 = grace row before the beat, 1 = the beat itself.
    seq: u8,
    text: String,
}

/// (meter tandem, measure length in whole notes).
fn meters() -> [(&'static str, Rational); 4] {
    [
        ("*M4/4", Rational::new(1, 1)),
        ("*M3/4", Rational::new(3, 4)),
        ("*M2/4", Rational::new(1, 2)),
        ("*M6/8", Rational::new(3, 4)),
    ]
}

/// (duration digits, dots, length); everything is a multiple of 1/16.
fn duration_menu() -> [(&'static str, u32, Rational); 8] {
    [
        ("1", 0, Rational::new(1, 1)),
        ("2", 1, Rational::new(3, 4)),
        ("2", 0, Rational::new(1, 2)),
        ("4", 1, Rational::new(3, 8)),
        ("4", 0, Rational::new(1, 4)),
        ("8", 1, Rational::new(3, 16)),
        ("8", 0, Rational::new(1, 8)),
        ("16", 0, Rational::new(1, 16)),
    ]
}

impl DocGen {
    pub fn new(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed ^ 0x6b65_726e);
        let dirty = rng.below(100) < 60;
        DocGen { rng, dirty }
    }

    /// Generator variant that introduces no artifacts the normalizer
    /// would have to remove or reorder.
    pub fn clean(seed: u64) -> Self {
        DocGen {
            rng: SplitMix64::new(seed ^ 0x636c_6561),
            dirty: false,
        }
    }

    fn chance(&mut self, percent: usize) -> bool {
        self.rng.below(100) < percent
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.rng.below(items.len())]
    }

    fn pitch(&mut self) -> String {
        let letter = b"abcdefg"[self.rng.below(7)];
        let upper = self.chance(30);
        let reps = 1 + self.rng.below(2);
        let c = if upper {
            letter.to_ascii_uppercase()
        } else {
            letter
        } as char;
        let mut s: String = std::iter::repeat_n(c, reps).collect();
        if self.chance(15) {
            let acc = if self.dirty && self.chance(10) {
                "#n" // repairable conflict
            } else {
                *self.pick(&["#", "##", "-", "--", "n"])
            };
            s.push_str(acc);
        }
        s
    }

    /// Assemble a token from parts, optionally scrambling the component
    /// order (intra-part byte order is preserved, so it lexes the same).
    fn token(&mut self, digits: &str, dots: u32, body: &str, extras: &[&str]) -> String {
        let mut parts: Vec<String> = vec![format!("{digits}{}", ".".repeat(dots as usize))];
        parts.push(body.to_string());
        parts.extend(extras.iter().map(|e| e.to_string()));
        if self.dirty && self.chance(25) && parts.len() > 1 {
            let mut shuffled: Vec<String> = Vec::new();
            let mut rest = parts;
            while !rest.is_empty() {
                let i = self.rng.below(rest.len());
                shuffled.push(rest.remove(i));
            }
            shuffled.concat()
        } else {
            parts.concat()
        }
    }

    /// Fill `target` exactly with menu durations.
    fn fill(&mut self, target: Rational) -> Vec<(&'static str, u32, Rational)> {
        let menu = duration_menu();
        let mut remaining = target;
        let mut out = Vec::new();
        while !remaining.is_zero() {
            let fitting: Vec<_> = menu.iter().filter(|d| d.2 <= remaining).collect();
            let d = **self.pick(&fitting);
            remaining = remaining - d.2;
            out.push(d);
        }
        out
    }

    /// Events of one voice filling one measure exactly.
    fn voice_measure(&mut self, target: Rational) -> Vec<VoiceEvent> {
        let slots = self.fill(target);
        let beamable: Vec<bool> = slots.iter().map(|d| d.2 <= Rational::new(3, 16)).collect();
        let beam_run = beamable.iter().filter(|&&b| b).count() >= 2 && self.chance(50);
        let n = slots.len();
        let tie_at = if n >= 2 && self.chance(20) {
            Some(self.rng.below(n - 1))
        } else {
            None
        };

        let mut events: Vec<VoiceEvent> = Vec::new();
        let mut onset = Rational::ZERO;
        let mut beam_started = false;
        for (i, (digits, dots, len)) in slots.into_iter().enumerate() {
            if self.chance(6) {
                let grace_body = if self.dirty && self.chance(30) {
                    "r".to_string()
                } else {
                    self.pitch()
                };
                let digits = *self.pick(&["8", "16"]);
                let grace = self.token(digits, 0, &grace_body, &["q"]);
                events.push(VoiceEvent {
                    onset,
                    seq: 0,
                    text: grace,
                });
            }
            let rest = self.chance(12);
            let chord = !rest && self.chance(18);
            let text = if rest {
                self.token(digits, dots, "r", &[])
            } else if chord {
                let k = 2 + self.rng.below(2);
                let mut members: Vec<String> = (0..k)
                    .map(|_| {
                        let p = self.pitch();
                        self.token(digits, dots, &p, &[])
                    })
                    .collect();
                members.dedup();
                if !self.dirty {
                    members.sort_by_key(|m| semitone_of(m));
                }
                members.join(" ")
            } else {
                let mut extras: Vec<&str> = Vec::new();
                if tie_at == Some(i) {
                    extras.push("[");
                }
                if i > 0 && tie_at == Some(i - 1) {
                    extras.push("]");
                }
                if self.dirty && self.chance(4) {
                    extras.push("[]");
                }
                if beam_run && beamable[i] {
                    if !beam_started {
                        extras.push("L");
                        beam_started = true;
                    } else if i + 1 >= beamable.len() || !beamable[i + 1] {
                        extras.push("J");
                    }
                }
                if self.chance(10) {
                    extras.push(self.pick(&["'", "~", ";", "^", "`"]));
                }
                if self.chance(15) {
                    extras.push(self.pick(&["/", "\\"]));
                }
                if self.dirty && self.chance(4) {
                    extras.push(self.pick(&["y", "yy"]));
                }
                let p = self.pitch();
                self.token(digits, dots, &p, &extras)
            };
            events.push(VoiceEvent {
                onset,
                seq: 1,
                text,
            });
            onset += len;
        }
        events
    }

    /// Merge per-voice events into onset-aligned rows with null padding.
    fn push_measure_rows(
        &mut self,
        lines: &mut Vec<String>,
        kern_voices: usize,
        text_spine: bool,
        target: Rational,
    ) {
        let voices: Vec<Vec<VoiceEvent>> = (0..kern_voices)
            .map(|_| self.voice_measure(target))
            .collect();
        let mut keys: Vec<(Rational, u8)> =
            voices.iter().flatten().map(|e| (e.onset, e.seq)).collect();
        keys.sort();
        keys.dedup();
        let word = *self.pick(&["la", "li", "lo", "ve", "um", "ne", "so"]);
        for (onset, seq) in keys {
            let mut row: Vec<String> = Vec::with_capacity(kern_voices + 1);
            for v in &voices {
                let cell = v
                    .iter()
                    .find(|e| e.onset == onset && e.seq == seq)
                    .map(|e| e.text.clone())
                    .unwrap_or_else(|| ".".to_string());
                row.push(cell);
            }
            if text_spine {
                row.push(if onset.is_zero() && seq == 1 {
                    word.to_string()
                } else {
                    ".".to_string()
                });
            }
            lines.push(row.join("\t"));
        }
    }

    pub fn generate(&mut self) -> String {
        let n_kern = 1 + self.rng.below(3);
        let text_spine = self.dirty && self.chance(20);
        let (meter_label, meter_value) = *self.pick(&meters());
        let measures = 2 + self.rng.below(5);
        // At most one split episode: spine `col` splits at the start of
        // measure `a` and merges back at the start of measure `b`.
        let split = if measures >= 3 && self.chance(35) {
            let a = 2 + self.rng.below(measures - 2);
            let b = a + 1 + self.rng.below(measures - a);
            Some((self.rng.below(n_kern), a, b))
        } else {
            None
        };

        let mut lines: Vec<String> = Vec::new();
        if self.dirty && self.chance(30) {
            lines.push("!!!COM: generated sample".to_string());
        }

        let base_width = n_kern + usize::from(text_spine);
        let header: Vec<&str> = (0..base_width)
            .map(|i| if i < n_kern { "**kern" } else { "**text" })
            .collect();
        lines.push(header.join("\t"));

        let clefs = ["*clefG2", "*clefF4", "*clefC3"];
        let clef_row: Vec<String> = (0..base_width)
            .map(|i| {
                if i < n_kern {
                    (*self.pick(&clefs)).to_string()
                } else {
                    "*".to_string()
                }
            })
            .collect();
        lines.push(clef_row.join("\t"));

        if self.chance(40) {
            let key = *self.pick(&["*k[]", "*k[f#]", "*k[f#c#]", "*k[b-]", "*k[b-e-]"]);
            lines.push(star_row(key, base_width, n_kern));
        }
        if self.dirty && meter_label == "*M4/4" && self.chance(40) {
            lines.push(star_row("*met(c)", base_width, n_kern));
        }
        lines.push(star_row(meter_label, base_width, n_kern));

        let mut width = base_width;
        let mut kern_voices = n_kern;
        if self.chance(20) {
            // Strictly short opening measure (anacrusis).
            let target = meter_value * Rational::new(1, 2);
            self.push_measure_rows(&mut lines, kern_voices, text_spine, target);
        }
        for m in 1..=measures {
            lines.push(vec![format!("={m}"); width].join("\t").to_string());
            if let Some((col, a, b)) = split {
                if m == a {
                    let mut row = vec!["*"; width];
                    row[col] = "*^";
                    lines.push(row.join("\t"));
                    width += 1;
                    kern_voices += 1;
                }
                if m == b {
                    let mut row = vec!["*"; width];
                    row[col] = "*v";
                    row[col + 1] = "*v";
                    lines.push(row.join("\t"));
                    width -= 1;
                    kern_voices -= 1;
                }
            }
            self.push_measure_rows(&mut lines, kern_voices, text_spine, meter_value);
        }

        if self.chance(40) {
            lines.push(vec!["=="; width].join("\t"));
        }
        lines.push(vec!["*-"; width].join("\t"));
        if self.dirty && self.chance(30) {
            lines.push("!! end".to_string());
        }

        let mut out = lines.join("\n");
        if !(self.dirty && self.chance(5)) {
            out.push('\n');
        }
        out
    }
}

fn star_row(cell: &str, width: usize, n_kern: usize) -> String {
    (0..width)
        .map(|i| if i < n_kern { cell } else { "*" })
        .collect::<Vec<_>>()
        .join("\t")
}

/// Crude semitone key for pre-sorting clean chords; mirrors the octave
/// convention without depending on the crate's parser.
fn semitone_of(member: &str) -> i32 {
    let mut first = ' ';
    let mut count: i32 = 0;
    for c in member.chars() {
        if matches!(c, 'a'..='g' | 'A'..='G') {
            if count == 0 {
                first = c;
            }
            if c == first {
                count += 1;
            }
        }
    }
    if count == 0 {
        return i32::MIN;
    }
    let class = match first.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        _ => 11,
    };
    let octave = if first.is_ascii_lowercase() {
        4 + (count - 1)
    } else {
        3 - (count - 1)
    };
    let mut semitone = (octave + 1) * 12 + class;
    for c in member.chars() {
        match c {
            '#' => semitone += 1,
            '-' => semitone -= 1,
            _ => {}
        }
    }
    semitone
}

/// Deterministic corpus of generated documents.
pub fn corpus(count: usize) -> Vec<String> {
    (0..count as u64)
        .map(|seed| DocGen::new(seed).generate())
        .collect()
}
