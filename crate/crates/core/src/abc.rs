//! ABC notation reader (single-voice subset).
//!
//! Every tune becomes one [`Music`] at 24 ticks per quarter note. Timing is
//! driven purely by note and rest lengths; bar lines only reset accidentals.
//! Decorations, grace notes and chord-symbol annotations are skipped and
//! counted in the diagnostics.

use std::collections::HashMap;
use std::ops::Range;

use num_rational::Ratio;

use crate::diagnostics::Diagnostics;
use crate::error::{Error, Result};
use crate::model::{
    KeySignature, Metadata, Mode, Music, Note, SourceFormat, Tempo, Tick, TimeSignature, Track,
    DEFAULT_VELOCITY, VALID_DENOMINATORS,
};
use crate::theory;

pub const ABC_RESOLUTION: u32 = 24;

/// Ticks in a whole note.
const WHOLE: i64 = 4 * ABC_RESOLUTION as i64;

type Frac = Ratio<i64>;

/// Header fields of one tune.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AbcHeader {
    pub reference: u32,
    pub title: Option<String>,
    pub composers: Vec<String>,
    pub meter: Option<String>,
    pub unit_length: Option<String>,
    pub tempo: Option<String>,
    pub key: Option<String>,
}

/// Reference number and byte span of every tune. A tune runs from its `X:`
/// line to the next `X:` line or the end of the text.
pub fn scan_tunes(text: &str) -> Vec<(u32, Range<usize>)> {
    let mut starts = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if let Some(rest) = line.strip_prefix("X:") {
            let digits: String = rest.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
            starts.push((digits.parse().unwrap_or(0), offset));
        }
        offset += line.len();
    }
    let mut spans = Vec::with_capacity(starts.len());
    for (i, &(reference, start)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(text.len(), |&(_, s)| s);
        spans.push((reference, start..end));
    }
    spans
}

/// Decodes ABC bytes as UTF-8, falling back to ISO-8859-1.
pub fn decode_abc_bytes(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

pub fn read_abc(text: &str) -> Result<Vec<Music>> {
    Ok(read_abc_with_diagnostics(text)?.into_iter().map(|(m, _)| m).collect())
}

pub fn read_abc_with_diagnostics(text: &str) -> Result<Vec<(Music, Diagnostics)>> {
    scan_tunes(text)
        .into_iter()
        .map(|(reference, span)| read_tune(&text[span], reference))
        .collect()
}

/// Parses the text of a single tune (starting at its `X:` line).
pub fn read_tune(text: &str, reference: u32) -> Result<(Music, Diagnostics)> {
    TuneParser::new(reference).parse(text)
}

#[derive(Clone, Debug)]
enum Element {
    Notes { pitches: Vec<u8>, len: Frac, tie: bool },
    Rest { len: Frac },
    Tempo(f64),
    Key(KeySignature),
    Meter(TimeSignature),
}

impl Element {
    fn len_mut(&mut self) -> Option<&mut Frac> {
        match self {
            Element::Notes { len, .. } | Element::Rest { len } => Some(len),
            _ => None,
        }
    }
}

#[derive(Clone, Copy)]
struct Tuplet {
    factor: Frac,
    remaining: u32,
}

struct TuneParser {
    reference: u32,
    header: AbcHeader,
    diag: Diagnostics,
    /// Unit note length as a fraction of a whole note.
    unit: Frac,
    meter: Option<(u32, u32)>,
    key_accidentals: [i32; 7],
    /// Accidentals in force until the next bar line, keyed by (letter, octave).
    measure_accidentals: HashMap<(usize, i32), i32>,
    tuplet: Option<Tuplet>,
    /// Length factor owed to the next note by a broken-rhythm marker.
    broken_next: Option<Frac>,
    elements: Vec<Element>,
}

fn frac(n: i64, d: i64) -> Frac {
    Ratio::new(n, d)
}

fn parse_fraction(s: &str) -> Option<(u32, u32)> {
    let (n, d) = s.trim().split_once('/')?;
    let n: u32 = n.trim().parse().ok()?;
    let d: u32 = d.trim().parse().ok()?;
    (n > 0 && d > 0).then_some((n, d))
}

enum KeySpec {
    None,
    Key { fifths: i32, mode: Mode, modal: bool, extra: Vec<(usize, i32)> },
}

fn parse_key(value: &str) -> Option<KeySpec> {
    let value = value.trim();
    let mut words = value.split_whitespace();
    let Some(first) = words.next() else {
        return Some(KeySpec::None);
    };
    if first.eq_ignore_ascii_case("none") {
        return Some(KeySpec::None);
    }
    if first == "HP" || first == "Hp" {
        return Some(KeySpec::Key { fifths: 2, mode: Mode::Major, modal: true, extra: Vec::new() });
    }
    let mut chars = first.chars();
    let letter = chars.next()?;
    let base = match letter.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => -1,
        'G' => 1,
        'A' => 3,
        'B' => 5,
        _ => return None,
    };
    let rest: String = chars.collect();
    let (acc, mode_word) = match rest.chars().next() {
        Some('#') => (7, rest[1..].to_string()),
        Some('b') => (-7, rest[1..].to_string()),
        _ => (0, rest),
    };
    // The mode may be glued to the tonic ("Am", "Ddor") or follow as a word.
    let mut mode_word = mode_word;
    let mut remaining: Vec<&str> = words.collect();
    if mode_word.is_empty() {
        if let Some(w) = remaining.first() {
            if !w.starts_with(['^', '_', '=']) && !w.contains('=') {
                mode_word = w.to_string();
                remaining.remove(0);
            }
        }
    }
    let m = mode_word.to_ascii_lowercase();
    let (offset, mode, modal) = match m.get(..3.min(m.len())).unwrap_or("") {
        "" | "maj" | "ion" => (0, Mode::Major, m.starts_with("ion")),
        "m" | "mi" | "min" => (-3, Mode::Minor, false),
        "aeo" => (-3, Mode::Minor, true),
        "mix" => (-1, Mode::Major, true),
        "dor" => (-2, Mode::Major, true),
        "phr" => (-4, Mode::Major, true),
        "lyd" => (1, Mode::Major, true),
        "loc" => (-5, Mode::Major, true),
        _ => {
            // Unknown words such as clef=... are ignored.
            if m.contains('=') {
                (0, Mode::Major, false)
            } else {
                return None;
            }
        }
    };
    let mut extra = Vec::new();
    for w in remaining {
        let (a, letter) = match w.as_bytes() {
            [b'^', b'^', l] => (2, *l),
            [b'^', l] => (1, *l),
            [b'_', b'_', l] => (-2, *l),
            [b'_', l] => (-1, *l),
            [b'=', l] => (0, *l),
            _ => continue,
        };
        if let Some(i) = theory::letter_index(letter as char) {
            extra.push((i, a));
        }
    }
    let fifths = base + acc + offset;
    let mode = if modal && offset == -3 { Mode::Minor } else { mode };
    Some(KeySpec::Key { fifths, mode, modal, extra })
}

impl TuneParser {
    fn new(reference: u32) -> Self {
        TuneParser {
            reference,
            header: AbcHeader { reference, ..AbcHeader::default() },
            diag: Diagnostics::new(),
            unit: frac(1, 8),
            meter: None,
            key_accidentals: [0; 7],
            measure_accidentals: HashMap::new(),
            tuplet: None,
            broken_next: None,
            elements: Vec::new(),
        }
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::AbcParse { tune: self.reference, offset, message: message.into() }
    }

    fn parse(mut self, text: &str) -> Result<(Music, Diagnostics)> {
        let mut in_body = false;
        let mut offset = 0;
        let mut header_tempo: Option<String> = None;
        let mut header_meter: Option<String> = None;
        let mut header_unit: Option<String> = None;
        for raw_line in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += raw_line.len();
            let line = raw_line.trim_end_matches(['\n', '\r']);
            if line.starts_with('%') {
                continue;
            }
            if in_body && line.trim().is_empty() {
                break;
            }
            let field = field_of(line);
            if !in_body {
                let Some((name, value)) = field else {
                    if line.trim().is_empty() {
                        continue;
                    }
                    return Err(Error::Schema(format!(
                        "tune X:{} has music before its K: field",
                        self.reference
                    )));
                };
                let value = strip_comment(value).trim().to_string();
                match name {
                    'T' if self.header.title.is_none() => self.header.title = Some(value),
                    'C' => self.header.composers.push(value),
                    'M' => header_meter = Some(value),
                    'L' => header_unit = Some(value),
                    'Q' => header_tempo = Some(value),
                    'V' => return Err(Error::Unsupported("multi-voice ABC (V: field)".into())),
                    'K' => {
                        self.header.meter = header_meter.clone();
                        self.header.unit_length = header_unit.clone();
                        self.header.tempo = header_tempo.clone();
                        self.header.key = Some(value.clone());
                        self.apply_meter(header_meter.as_deref().unwrap_or(""))?;
                        match header_unit.as_deref() {
                            Some(l) => self.apply_unit(l, line_offset)?,
                            None => {
                                self.unit = match self.meter {
                                    Some((n, d)) if (n as f64) / (d as f64) < 0.75 => frac(1, 16),
                                    _ => frac(1, 8),
                                };
                            }
                        }
                        if let Some(q) = header_tempo.as_deref() {
                            self.apply_tempo(q);
                        }
                        self.apply_key(&value, line_offset)?;
                        in_body = true;
                    }
                    _ => {}
                }
                continue;
            }
            if let Some((name, value)) = field {
                let value = strip_comment(value).trim();
                match name {
                    'K' => self.apply_key(value, line_offset)?,
                    'M' => self.apply_meter(value)?,
                    'L' => self.apply_unit(value, line_offset)?,
                    'Q' => self.apply_tempo(value),
                    'V' => return Err(Error::Unsupported("multi-voice ABC (V: field)".into())),
                    'w' | 'W' => self.diag.record("lyrics_skipped"),
                    _ => {}
                }
                continue;
            }
            self.parse_music_line(line, line_offset)?;
        }
        if !in_body {
            return Err(Error::Schema(format!("tune X:{} has no K: field", self.reference)));
        }
        Ok(self.finish())
    }

    fn apply_meter(&mut self, value: &str) -> Result<()> {
        let value = value.trim();
        let meter = match value {
            "none" | "" => None,
            "C" => Some((4, 4)),
            "C|" => Some((2, 2)),
            v => match parse_fraction(v) {
                Some(f) => Some(f),
                None => {
                    self.diag.record("unsupported_meter");
                    return Ok(());
                }
            },
        };
        self.meter = meter;
        if let Some((numerator, denominator)) = meter {
            if VALID_DENOMINATORS.contains(&denominator) {
                self.elements.push(Element::Meter(TimeSignature { time: 0, numerator, denominator }));
            } else {
                self.diag.record("unsupported_meter");
            }
        }
        Ok(())
    }

    fn apply_unit(&mut self, value: &str, offset: usize) -> Result<()> {
        match parse_fraction(value) {
            Some((n, d)) => {
                self.unit = frac(n as i64, d as i64);
                Ok(())
            }
            None => Err(self.err(offset, format!("invalid unit note length {value:?}"))),
        }
    }

    fn apply_tempo(&mut self, value: &str) {
        // Drop quoted text such as "Allegro".
        let mut cleaned = String::new();
        let mut quoted = false;
        for c in value.chars() {
            if c == '"' {
                quoted = !quoted;
            } else if !quoted {
                cleaned.push(c);
            }
        }
        let cleaned = cleaned.trim();
        let qpm = if let Some((beats, bpm)) = cleaned.split_once('=') {
            let bpm: Option<f64> = bpm.trim().parse().ok();
            let beat_total: Option<Frac> = if beats.trim() == "C" || beats.trim().is_empty() {
                Some(self.unit)
            } else {
                beats
                    .split_whitespace()
                    .map(|b| parse_fraction(b).map(|(n, d)| frac(n as i64, d as i64)))
                    .sum()
            };
            match (bpm, beat_total) {
                (Some(bpm), Some(beat)) => Some(bpm * 4.0 * (*beat.numer() as f64) / (*beat.denom() as f64)),
                _ => None,
            }
        } else {
            cleaned
                .parse::<f64>()
                .ok()
                .map(|n| n * 4.0 * (*self.unit.numer() as f64) / (*self.unit.denom() as f64))
        };
        match qpm {
            Some(q) if q > 0.0 && q.is_finite() => self.elements.push(Element::Tempo(q)),
            _ => self.diag.record("unrecognized_tempo"),
        }
    }

    fn apply_key(&mut self, value: &str, offset: usize) -> Result<()> {
        match parse_key(value) {
            None => Err(self.err(offset, format!("invalid key {value:?}"))),
            Some(KeySpec::None) => {
                self.key_accidentals = [0; 7];
                Ok(())
            }
            Some(KeySpec::Key { fifths, mode, modal, extra }) => {
                self.key_accidentals = theory::key_accidentals(fifths);
                if !extra.is_empty() {
                    self.diag.record("explicit_key_accidentals");
                }
                for (letter, acc) in extra {
                    self.key_accidentals[letter] = acc;
                }
                let key = if modal && mode == Mode::Major {
                    self.diag.record("modal_key_mapped");
                    KeySignature { time: 0, root: theory::fifths_to_root(fifths, Mode::Major), mode: Mode::Major }
                } else {
                    KeySignature { time: 0, root: theory::fifths_to_root(fifths, mode), mode }
                };
                self.elements.push(Element::Key(key));
                self.measure_accidentals.clear();
                Ok(())
            }
        }
    }

    fn bar(&mut self) {
        self.measure_accidentals.clear();
    }

    fn push_timed(&mut self, mut el: Element) {
        if let Some(len) = el.len_mut() {
            if let Some(f) = self.broken_next.take() {
                *len *= f;
            }
            if let Some(t) = &mut self.tuplet {
                *len *= t.factor;
                t.remaining -= 1;
                if t.remaining == 0 {
                    self.tuplet = None;
                }
            }
        }
        self.elements.push(el);
    }

    fn last_timed_mut(&mut self) -> Option<&mut Element> {
        self.elements
            .iter_mut()
            .rev()
            .find(|e| matches!(e, Element::Notes { .. } | Element::Rest { .. }))
    }

    fn parse_music_line(&mut self, line: &str, base: usize) -> Result<()> {
        let line = strip_comment(line);
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut i = 0;
        let at = |i: usize| chars.get(i).map(|&(_, c)| c);
        let off = |i: usize| base + chars.get(i).map_or(line.len(), |&(o, _)| o);
        while i < chars.len() {
            let c = chars[i].1;
            match c {
                ' ' | '\t' | '`' | 'y' | '\\' | ')' => i += 1,
                '|' | ':' => {
                    while matches!(at(i), Some('|' | ':' | ']')) {
                        i += 1;
                    }
                    while matches!(at(i), Some(c) if c.is_ascii_digit() || c == ',' || c == '-') {
                        i += 1;
                    }
                    self.bar();
                }
                '[' => match (at(i + 1), at(i + 2)) {
                    (Some('|'), _) => {
                        i += 1;
                        while matches!(at(i), Some('|' | ':' | ']')) {
                            i += 1;
                        }
                        self.bar();
                    }
                    (Some(d), _) if d.is_ascii_digit() => {
                        i += 1;
                        while matches!(at(i), Some(c) if c.is_ascii_digit() || c == ',' || c == '-') {
                            i += 1;
                        }
                        self.bar();
                    }
                    (Some(f), Some(':')) if f.is_ascii_alphabetic() => {
                        let end = (i..chars.len())
                            .find(|&j| chars[j].1 == ']')
                            .ok_or_else(|| self.err(off(i), "unterminated inline field"))?;
                        let value: String = chars[i + 3..end].iter().map(|&(_, c)| c).collect();
                        match f {
                            'K' => self.apply_key(&value, off(i))?,
                            'M' => self.apply_meter(&value)?,
                            'L' => self.apply_unit(&value, off(i))?,
                            'Q' => self.apply_tempo(&value),
                            'V' => return Err(Error::Unsupported("multi-voice ABC (V: field)".into())),
                            _ => {}
                        }
                        i = end + 1;
                    }
                    _ => {
                        i = self.parse_chord(&chars, i, base, line.len())?;
                    }
                },
                '"' => {
                    let end = (i + 1..chars.len())
                        .find(|&j| chars[j].1 == '"')
                        .ok_or_else(|| self.err(off(i), "unterminated annotation"))?;
                    self.diag.record("annotation_skipped");
                    i = end + 1;
                }
                '!' | '+' => {
                    match (i + 1..chars.len()).find(|&j| chars[j].1 == c) {
                        Some(end) => {
                            self.diag.record("decoration_skipped");
                            i = end + 1;
                        }
                        // A lone '!' is an old-style line break.
                        None => i += 1,
                    }
                }
                '.' | '~' | 'H' | 'L' | 'M' | 'O' | 'P' | 'S' | 'T' | 'u' | 'v' => {
                    self.diag.record("decoration_skipped");
                    i += 1;
                }
                '{' => {
                    let end = (i + 1..chars.len())
                        .find(|&j| chars[j].1 == '}')
                        .ok_or_else(|| self.err(off(i), "unterminated grace notes"))?;
                    self.diag.record("grace_note_skipped");
                    i = end + 1;
                }
                '(' => {
                    if matches!(at(i + 1), Some(d) if d.is_ascii_digit()) {
                        i = self.parse_tuplet(&chars, i + 1)?;
                    } else {
                        i += 1;
                    }
                }
                '-' => {
                    match self.last_timed_mut() {
                        Some(Element::Notes { tie, .. }) => *tie = true,
                        _ => return Err(self.err(off(i), "tie without a preceding note")),
                    }
                    i += 1;
                }
                '>' | '<' => {
                    let mut n = 0;
                    while at(i) == Some(c) {
                        n += 1;
                        i += 1;
                    }
                    let small = frac(1, 1 << n);
                    let large = frac(2, 1) - small;
                    let (prev, next) = if c == '>' { (large, small) } else { (small, large) };
                    match self.last_timed_mut().and_then(|e| e.len_mut()) {
                        Some(len) => *len *= prev,
                        None => return Err(self.err(off(i - n), "broken rhythm without a preceding note")),
                    }
                    self.broken_next = Some(next);
                }
                '^' | '_' | '=' | 'A'..='G' | 'a'..='g' => {
                    let (pitch, len, next) = self.parse_note(&chars, i, base, line.len())?;
                    self.push_timed(Element::Notes { pitches: vec![pitch], len, tie: false });
                    i = next;
                }
                'z' | 'x' => {
                    let (mul, next) = parse_length(&chars, i + 1);
                    let mul = mul.ok_or_else(|| self.err(off(i), "invalid rest length"))?;
                    self.push_timed(Element::Rest { len: self.unit * mul });
                    i = next;
                }
                'Z' | 'X' => {
                    let (mul, next) = parse_length(&chars, i + 1);
                    let bars = mul.ok_or_else(|| self.err(off(i), "invalid multi-measure rest"))?;
                    let (n, d) = self.meter.unwrap_or((4, 4));
                    self.elements.push(Element::Rest { len: frac(n as i64, d as i64) * bars });
                    i = next;
                }
                '&' => return Err(Error::Unsupported("voice overlay (&)".into())),
                _ => return Err(self.err(off(i), format!("unexpected character {c:?}"))),
            }
        }
        Ok(())
    }

    fn parse_tuplet(&mut self, chars: &[(usize, char)], mut i: usize) -> Result<usize> {
        let mut nums: Vec<Option<u32>> = Vec::new();
        let mut current = String::new();
        loop {
            match chars.get(i).map(|&(_, c)| c) {
                Some(d) if d.is_ascii_digit() => current.push(d),
                Some(':') if nums.len() < 2 => {
                    nums.push(current.parse().ok());
                    current.clear();
                }
                _ => break,
            }
            i += 1;
        }
        nums.push(current.parse().ok());
        let p = nums[0].unwrap_or(3).max(1);
        let compound = matches!(self.meter, Some((n, _)) if n % 3 == 0 && n > 3);
        let default_q = match p {
            2 | 4 | 8 => 3,
            3 | 6 => 2,
            _ if compound => 3,
            _ => 2,
        };
        let q = nums.get(1).copied().flatten().unwrap_or(default_q);
        let r = nums.get(2).copied().flatten().unwrap_or(p);
        if r > 0 {
            self.tuplet = Some(Tuplet { factor: frac(q as i64, p as i64), remaining: r });
        }
        Ok(i)
    }

    /// Parses accidental, letter, octave marks and length. Returns (pitch, length, next index).
    fn parse_note(&mut self, chars: &[(usize, char)], mut i: usize, base: usize, line_len: usize) -> Result<(u8, Frac, usize)> {
        let off = |i: usize| base + chars.get(i).map_or(line_len, |&(o, _)| o);
        let start = i;
        let mut explicit: Option<i32> = None;
        loop {
            match chars.get(i).map(|&(_, c)| c) {
                Some('^') => explicit = Some(explicit.unwrap_or(0) + 1),
                Some('_') => explicit = Some(explicit.unwrap_or(0) - 1),
                Some('=') => explicit = Some(0),
                _ => break,
            }
            i += 1;
        }
        let letter = match chars.get(i).map(|&(_, c)| c) {
            Some(l @ ('A'..='G' | 'a'..='g')) => l,
            _ => return Err(self.err(off(start), "accidental without a note letter")),
        };
        i += 1;
        let mut octave = if letter.is_ascii_lowercase() { 5 } else { 4 };
        loop {
            match chars.get(i).map(|&(_, c)| c) {
                Some('\'') => octave += 1,
                Some(',') => octave -= 1,
                _ => break,
            }
            i += 1;
        }
        let li = theory::letter_index(letter).expect("note letter");
        let alter = match explicit {
            Some(a) => {
                self.measure_accidentals.insert((li, octave), a);
                a
            }
            None => self
                .measure_accidentals
                .get(&(li, octave))
                .copied()
                .unwrap_or(self.key_accidentals[li]),
        };
        let pitch = (octave + 1) * 12 + theory::step_semitone(letter).unwrap() + alter;
        if !(0..=127).contains(&pitch) {
            return Err(self.err(off(start), format!("pitch {pitch} out of range")));
        }
        let (mul, next) = parse_length(chars, i);
        let mul = mul.ok_or_else(|| self.err(off(i), "invalid note length"))?;
        Ok((pitch as u8, self.unit * mul, next))
    }

    fn parse_chord(&mut self, chars: &[(usize, char)], open: usize, base: usize, line_len: usize) -> Result<usize> {
        let off = |i: usize| base + chars.get(i).map_or(line_len, |&(o, _)| o);
        let mut i = open + 1;
        let mut pitches = Vec::new();
        let mut first_len: Option<Frac> = None;
        let mut tie = false;
        loop {
            match chars.get(i).map(|&(_, c)| c) {
                Some(']') => {
                    i += 1;
                    break;
                }
                Some('^' | '_' | '=' | 'A'..='G' | 'a'..='g') => {
                    let (p, len, next) = self.parse_note(chars, i, base, line_len)?;
                    pitches.push(p);
                    first_len.get_or_insert(len);
                    i = next;
                }
                Some('-') => {
                    tie = true;
                    i += 1;
                }
                Some(' ' | '.' | '~') => i += 1,
                Some('!') => {
                    let end = (i + 1..chars.len())
                        .find(|&j| chars[j].1 == '!')
                        .ok_or_else(|| self.err(off(i), "unterminated decoration"))?;
                    self.diag.record("decoration_skipped");
                    i = end + 1;
                }
                Some(c) => return Err(self.err(off(i), format!("unexpected {c:?} in chord"))),
                None => return Err(self.err(off(open), "unterminated chord")),
            }
        }
        let (mul, next) = parse_length(chars, i);
        let mul = mul.ok_or_else(|| self.err(off(i), "invalid chord length"))?;
        let Some(len) = first_len else {
            return Err(self.err(off(open), "empty chord"));
        };
        self.push_timed(Element::Notes { pitches, len: len * mul, tie });
        Ok(next)
    }

    fn finish(self) -> (Music, Diagnostics) {
        let mut diag = self.diag;
        let mut music = Music::new(ABC_RESOLUTION);
        music.metadata = Metadata::new(SourceFormat::Abc);
        music.metadata.title = self.header.title.clone();
        music.metadata.creators = self.header.composers.clone();
        let mut track = Track::new(0, false);

        let ticks = |t: Frac| -> Tick {
            let x = t * WHOLE;
            // round half up
            ((x + frac(1, 2)).floor().to_integer()).max(0) as Tick
        };
        let mut now = frac(0, 1);
        let mut pending: HashMap<u8, usize> = HashMap::new();
        let mut inexact = 0;
        for el in self.elements {
            match el {
                Element::Tempo(qpm) => music.tempos.push(Tempo { time: ticks(now), qpm }),
                Element::Key(mut k) => {
                    k.time = ticks(now);
                    music.key_signatures.push(k);
                }
                Element::Meter(mut m) => {
                    m.time = ticks(now);
                    music.time_signatures.push(m);
                }
                Element::Rest { len } => {
                    if !(len * WHOLE).is_integer() {
                        inexact += 1;
                    }
                    now += len;
                    if !pending.is_empty() {
                        diag.add("unterminated_tie", pending.len());
                        pending.clear();
                    }
                }
                Element::Notes { pitches, len, tie } => {
                    if !(len * WHOLE).is_integer() {
                        inexact += 1;
                    }
                    let (start, end) = (ticks(now), ticks(now + len));
                    let mut next_pending = HashMap::new();
                    for p in pitches {
                        let idx = match pending.remove(&p) {
                            Some(idx) => {
                                let n: &mut Note = &mut track.notes[idx];
                                n.duration = end - n.time;
                                idx
                            }
                            None => {
                                track.notes.push(Note::new(start, p, end - start, DEFAULT_VELOCITY));
                                track.notes.len() - 1
                            }
                        };
                        if tie {
                            next_pending.insert(p, idx);
                        }
                    }
                    diag.add("unterminated_tie", pending.len());
                    pending = next_pending;
                    now += len;
                }
            }
        }
        diag.add("unterminated_tie", pending.len());
        diag.add("inexact_duration", inexact);
        music.tracks.push(track);
        music.tempos = dedupe_last(music.tempos, |t| t.time);
        music.key_signatures = dedupe_last(music.key_signatures, |k| k.time);
        music.time_signatures = dedupe_last(music.time_signatures, |t| t.time);
        music.sort();
        (music, diag)
    }
}

fn dedupe_last<T, F: Fn(&T) -> Tick>(mut items: Vec<T>, key: F) -> Vec<T> {
    items.reverse();
    items.sort_by_key(|i| key(i));
    items.dedup_by(|b, a| key(a) == key(b));
    items
}

/// `Some((letter, value))` for a field line such as `K:G`.
fn field_of(line: &str) -> Option<(char, &str)> {
    let mut it = line.chars();
    let name = it.next()?;
    if name.is_ascii_alphabetic() && it.next() == Some(':') {
        Some((name, &line[2..]))
    } else {
        None
    }
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'%' && (i == 0 || bytes[i - 1] != b'\\') {
            return &line[..i];
        }
    }
    line
}

/// Length suffix after a note or rest: `2`, `/`, `//`, `3/2`, `/4`.
/// Returns the multiplier (None if malformed) and the next index.
fn parse_length(chars: &[(usize, char)], mut i: usize) -> (Option<Frac>, usize) {
    let digits = |i: &mut usize| {
        let mut s = String::new();
        while let Some(&(_, c)) = chars.get(*i) {
            if !c.is_ascii_digit() {
                break;
            }
            s.push(c);
            *i += 1;
        }
        s
    };
    let num = digits(&mut i);
    let num: i64 = if num.is_empty() {
        1
    } else {
        match num.parse() {
            Ok(n) if n > 0 => n,
            _ => return (None, i),
        }
    };
    let mut den: i64 = 1;
    if chars.get(i).map(|&(_, c)| c) == Some('/') {
        let mut slashes = 0;
        while chars.get(i).map(|&(_, c)| c) == Some('/') {
            slashes += 1;
            i += 1;
        }
        let d = digits(&mut i);
        den = if d.is_empty() {
            1 << slashes.min(16)
        } else if slashes == 1 {
            match d.parse() {
                Ok(n) if n > 0 => n,
                _ => return (None, i),
            }
        } else {
            return (None, i);
        };
    }
    (Some(frac(num, den)), i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn notes(text: &str) -> Vec<Note> {
        let tunes = read_abc(text).unwrap();
        assert_eq!(tunes.len(), 1);
        tunes[0].tracks[0].notes.clone()
    }

    #[test]
    fn single_quarter_note() {
        let m = &read_abc("X:1\nT:t\nM:4/4\nL:1/4\nK:C\nC").unwrap()[0];
        assert_eq!(m.resolution, 24);
        assert_eq!(m.metadata.title.as_deref(), Some("t"));
        assert_eq!(m.tracks[0].notes, [Note::new(0, 60, 24, 64)]);
        assert_eq!(m.time_signatures, [TimeSignature { time: 0, numerator: 4, denominator: 4 }]);
        assert_eq!(m.key_signatures, [KeySignature { time: 0, root: 0, mode: Mode::Major }]);
    }

    #[test]
    fn unit_length_arithmetic() {
        assert_eq!(
            notes("X:1\nL:1/8\nK:C\nCD"),
            [Note::new(0, 60, 12, 64), Note::new(12, 62, 12, 64)]
        );
        assert_eq!(notes("X:1\nL:1/8\nK:C\nz2 C"), [Note::new(24, 60, 12, 64)]);
    }

    #[test]
    fn default_unit_length_from_meter() {
        assert_eq!(notes("X:1\nM:2/4\nK:C\nC")[0].duration, 6);
        assert_eq!(notes("X:1\nM:6/8\nK:C\nC")[0].duration, 12);
        assert_eq!(notes("X:1\nK:C\nC")[0].duration, 12);
    }

    #[test]
    fn octaves_and_accidentals() {
        let n = notes("X:1\nL:1/4\nK:C\nc C, c' ^F _B =B");
        let p: Vec<u8> = n.iter().map(|n| n.pitch).collect();
        assert_eq!(p, [72, 48, 84, 66, 70, 71]);
    }

    #[test]
    fn key_signature_applies() {
        let n = notes("X:1\nL:1/4\nK:G\nF f =F");
        let p: Vec<u8> = n.iter().map(|n| n.pitch).collect();
        assert_eq!(p, [66, 78, 65]);
        let n = notes("X:1\nL:1/4\nK:Bb\nB E");
        assert_eq!(n[0].pitch, 70);
        assert_eq!(n[1].pitch, 63);
    }

    #[test]
    fn accidentals_persist_until_bar() {
        let n = notes("X:1\nL:1/4\nK:C\n^F F f | F");
        let p: Vec<u8> = n.iter().map(|n| n.pitch).collect();
        // same octave keeps the sharp, other octave does not, bar line resets
        assert_eq!(p, [66, 66, 77, 65]);
    }

    #[test]
    fn lengths_and_broken_rhythm() {
        let n = notes("X:1\nL:1/8\nK:C\nC2 D/ E// F3/2 G>A B<c");
        let d: Vec<Tick> = n.iter().map(|n| n.duration).collect();
        assert_eq!(d, [24, 6, 3, 18, 18, 6, 6, 18]);
    }

    #[test]
    fn triplets_and_ties() {
        let n = notes("X:1\nL:1/8\nK:C\n(3CDE F2-|F2");
        assert_eq!(
            n,
            [
                Note::new(0, 60, 8, 64),
                Note::new(8, 62, 8, 64),
                Note::new(16, 64, 8, 64),
                Note::new(24, 65, 48, 64),
            ]
        );
    }

    #[test]
    fn chords_share_onset() {
        let n = notes("X:1\nL:1/4\nK:C\n[CEG]2 c");
        assert_eq!(
            n,
            [
                Note::new(0, 60, 48, 64),
                Note::new(0, 64, 48, 64),
                Note::new(0, 67, 48, 64),
                Note::new(48, 72, 24, 64),
            ]
        );
    }

    #[test]
    fn decorations_annotations_and_grace_skipped() {
        let tunes = read_abc_with_diagnostics("X:1\nL:1/4\nK:C\n\"Am\"!trill!{g}~A .B|]").unwrap();
        let (m, d) = &tunes[0];
        assert_eq!(m.tracks[0].notes.len(), 2);
        assert_eq!(d.count("annotation_skipped"), 1);
        assert_eq!(d.count("decoration_skipped"), 3);
        assert_eq!(d.count("grace_note_skipped"), 1);
    }

    #[test]
    fn tempo_forms() {
        let m = &read_abc("X:1\nL:1/8\nQ:1/4=100\nK:C\nC").unwrap()[0];
        assert_eq!(m.tempos, [Tempo { time: 0, qpm: 100.0 }]);
        let m = &read_abc("X:1\nL:1/8\nQ:120\nK:C\nC").unwrap()[0];
        assert_eq!(m.tempos, [Tempo { time: 0, qpm: 60.0 }]);
        let tunes = read_abc_with_diagnostics("X:1\nQ:fast\nK:C\nC").unwrap();
        assert!(tunes[0].0.tempos.is_empty());
        assert_eq!(tunes[0].1.count("unrecognized_tempo"), 1);
    }

    #[test]
    fn minor_and_modal_keys() {
        let m = &read_abc("X:1\nK:Am\nC").unwrap()[0];
        assert_eq!(m.key_signatures[0].root, 9);
        assert_eq!(m.key_signatures[0].mode, Mode::Minor);
        let m = &read_abc("X:1\nK:D dor\nF").unwrap()[0];
        assert_eq!(m.key_signatures[0], KeySignature { time: 0, root: 0, mode: Mode::Major });
        assert_eq!(m.tracks[0].notes[0].pitch, 65);
        let m = &read_abc("X:1\nK:Ebmaj\nE").unwrap()[0];
        assert_eq!(m.key_signatures[0].root, 3);
        assert_eq!(m.tracks[0].notes[0].pitch, 63);
    }

    #[test]
    fn errors() {
        assert!(matches!(read_abc("X:1\nT:no key\n"), Err(Error::Schema(_))));
        match read_abc("X:7\nK:C\nCD#E") {
            Err(Error::AbcParse { tune: 7, offset, .. }) => assert_eq!(offset, 10),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_abc("X:1\nV:1\nK:C\nC"), Err(Error::Unsupported(_))));
    }

    #[test]
    fn scan() {
        assert!(scan_tunes("").is_empty());
        let text = "%header\nX:1\nK:C\nC\n\nX:2\nK:G\nG\n";
        let spans = scan_tunes(text);
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].0, 1);
        assert_eq!(&text[spans[0].1.clone()], "X:1\nK:C\nC\n\n");
        assert_eq!(&text[spans[1].1.clone()], "X:2\nK:G\nG\n");
        let one = scan_tunes("X:5\nK:C\nC");
        assert_eq!(one, [(5, 0..9)]);
        assert_eq!(read_abc(text).unwrap().len(), 2);
    }

    #[test]
    fn duration_conservation() {
        // notes + rests fill the elapsed time exactly, tuplets included
        let m = &read_abc("X:1\nL:1/8\nK:C\n(3CDE z (5CDEFG z/ A3/2|").unwrap()[0];
        let notes: Tick = m.tracks[0].notes.iter().map(|n| n.duration).sum();
        let rests: Tick = 12 + 6;
        let last = m.tracks[0].notes.last().unwrap();
        assert_eq!(notes + rests, last.end());
    }

    #[test]
    fn latin1_bytes() {
        let text = decode_abc_bytes(b"X:1\nT:Gr\xfcn\nK:C\nC");
        assert_eq!(read_abc(&text).unwrap()[0].metadata.title.as_deref(), Some("Grün"));
    }
}
