//! The canonical in-memory music container.
//!
//! Every reader produces a [`Music`], every writer and encoder consumes one.
//! Times are integer ticks; `resolution` ticks make one quarter note.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer time unit. `resolution` ticks make one quarter note.
pub type Tick = u64;

/// Version string embedded in every canonical document.
pub const SCHEMA_VERSION: &str = "1.0";

/// Tempo assumed before the first tempo event (the SMF default).
pub const DEFAULT_QPM: f64 = 120.0;

/// Velocity given to notes whose source carries no dynamics.
pub const DEFAULT_VELOCITY: u8 = 64;

pub const VALID_DENOMINATORS: [u32; 7] = [1, 2, 4, 8, 16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Midi,
    Musicxml,
    Abc,
    Muspy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Major => "major",
            Mode::Minor => "minor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(skip, default = "schema_version_default")]
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub creators: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copyright: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_filename: Option<String>,
    pub source_format: SourceFormat,
}

fn schema_version_default() -> String {
    SCHEMA_VERSION.to_string()
}

impl Metadata {
    pub fn new(source_format: SourceFormat) -> Self {
        Metadata {
            schema_version: schema_version_default(),
            title: None,
            creators: Vec::new(),
            copyright: None,
            collection: None,
            source_filename: None,
            source_format,
        }
    }
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata::new(SourceFormat::Muspy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tempo {
    pub time: Tick,
    /// Quarter notes per minute.
    pub qpm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySignature {
    pub time: Tick,
    /// Pitch class of the tonic, 0 = C.
    pub root: u8,
    pub mode: Mode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSignature {
    pub time: Tick,
    pub numerator: u32,
    pub denominator: u32,
}

impl TimeSignature {
    /// Measure length in ticks at `resolution`, if it is a whole number of ticks.
    pub fn measure_ticks(&self, resolution: u32) -> Option<Tick> {
        let num = self.numerator as u64 * 4 * resolution as u64;
        let den = self.denominator as u64;
        (den > 0 && num % den == 0 && num > 0).then(|| num / den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Note {
    pub time: Tick,
    pub pitch: u8,
    pub duration: Tick,
    pub velocity: u8,
}

impl Note {
    pub fn new(time: Tick, pitch: u8, duration: Tick, velocity: u8) -> Self {
        Note {
            time,
            pitch,
            duration,
            velocity,
        }
    }

    pub fn end(&self) -> Tick {
        self.time + self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chord {
    pub time: Tick,
    pub pitches: Vec<u8>,
    pub duration: Tick,
    pub velocity: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lyric {
    pub time: Tick,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Track {
    pub program: u8,
    pub is_drum: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub notes: Vec<Note>,
    #[serde(default)]
    pub chords: Vec<Chord>,
    #[serde(default)]
    pub lyrics: Vec<Lyric>,
}

impl Track {
    pub fn new(program: u8, is_drum: bool) -> Self {
        Track {
            program,
            is_drum,
            ..Track::default()
        }
    }

    pub fn with_notes(mut self, notes: Vec<Note>) -> Self {
        self.notes = notes;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Music {
    pub metadata: Metadata,
    pub resolution: u32,
    pub tempos: Vec<Tempo>,
    pub key_signatures: Vec<KeySignature>,
    pub time_signatures: Vec<TimeSignature>,
    pub tracks: Vec<Track>,
}

/// A single broken invariant: the offending field path and what is wrong with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl Music {
    pub fn new(resolution: u32) -> Self {
        Music {
            metadata: Metadata::default(),
            resolution,
            tempos: Vec::new(),
            key_signatures: Vec::new(),
            time_signatures: Vec::new(),
            tracks: Vec::new(),
        }
    }

    /// Returns every broken type invariant. An empty list means the music is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: String, message: String| out.push(Violation { path, message });

        if self.metadata.schema_version != SCHEMA_VERSION {
            bad(
                "metadata.schema_version".into(),
                format!(
                    "{:?} does not match {:?}",
                    self.metadata.schema_version, SCHEMA_VERSION
                ),
            );
        }
        if self.resolution < 1 {
            bad("resolution".into(), format!("{} must be at least 1", self.resolution));
        }
        for (i, t) in self.tempos.iter().enumerate() {
            if !(t.qpm.is_finite() && t.qpm > 0.0) {
                bad(format!("tempos[{i}].qpm"), format!("{} must be positive", t.qpm));
            }
        }
        for (i, k) in self.key_signatures.iter().enumerate() {
            if k.root > 11 {
                bad(
                    format!("key_signatures[{i}].root"),
                    format!("{} must be in [0, 11]", k.root),
                );
            }
        }
        for (i, ts) in self.time_signatures.iter().enumerate() {
            if ts.numerator < 1 {
                bad(
                    format!("time_signatures[{i}].numerator"),
                    format!("{} must be positive", ts.numerator),
                );
            }
            if !VALID_DENOMINATORS.contains(&ts.denominator) {
                bad(
                    format!("time_signatures[{i}].denominator"),
                    format!("{} must be a power of two up to 64", ts.denominator),
                );
            }
        }
        for (ti, track) in self.tracks.iter().enumerate() {
            if track.program > 127 {
                bad(
                    format!("tracks[{ti}].program"),
                    format!("{} must be in [0, 127]", track.program),
                );
            }
            for (ni, n) in track.notes.iter().enumerate() {
                if n.pitch > 127 {
                    bad(
                        format!("tracks[{ti}].notes[{ni}].pitch"),
                        format!("{} must be in [0, 127]", n.pitch),
                    );
                }
                if n.velocity > 127 {
                    bad(
                        format!("tracks[{ti}].notes[{ni}].velocity"),
                        format!("{} must be in [0, 127]", n.velocity),
                    );
                }
            }
            for (ci, c) in track.chords.iter().enumerate() {
                if c.pitches.is_empty() {
                    bad(
                        format!("tracks[{ti}].chords[{ci}].pitches"),
                        "must not be empty".into(),
                    );
                }
                for (pi, &p) in c.pitches.iter().enumerate() {
                    if p > 127 {
                        bad(
                            format!("tracks[{ti}].chords[{ci}].pitches[{pi}]"),
                            format!("{p} must be in [0, 127]"),
                        );
                    }
                }
                if c.velocity > 127 {
                    bad(
                        format!("tracks[{ti}].chords[{ci}].velocity"),
                        format!("{} must be in [0, 127]", c.velocity),
                    );
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Returns `Err(Error::Validation)` carrying every violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// Stable sort of every event list by time. Notes at equal time are
    /// ordered by ascending pitch.
    pub fn sort(&mut self) {
        self.tempos.sort_by_key(|t| t.time);
        self.key_signatures.sort_by_key(|k| k.time);
        self.time_signatures.sort_by_key(|t| t.time);
        for track in &mut self.tracks {
            track.notes.sort_by_key(|n| (n.time, n.pitch));
            track.chords.sort_by_key(|c| c.time);
            track.lyrics.sort_by_key(|l| l.time);
        }
    }

    pub fn sorted(mut self) -> Self {
        self.sort();
        self
    }

    /// Rescales every time and duration to a new resolution, rounding half up.
    pub fn adjust_resolution(&mut self, target: u32) -> Result<()> {
        if target == 0 {
            return Err(Error::InvalidArgument("target resolution must be at least 1".into()));
        }
        if self.resolution == 0 {
            return Err(Error::InvalidArgument("source resolution is 0".into()));
        }
        if target == self.resolution {
            return Ok(());
        }
        let (from, to) = (self.resolution as u128, target as u128);
        let scale = |t: Tick| -> Tick {
            let num = t as u128 * to * 2 + from;
            (num / (2 * from)) as Tick
        };
        for t in &mut self.tempos {
            t.time = scale(t.time);
        }
        for k in &mut self.key_signatures {
            k.time = scale(k.time);
        }
        for ts in &mut self.time_signatures {
            ts.time = scale(ts.time);
        }
        for track in &mut self.tracks {
            for n in &mut track.notes {
                n.time = scale(n.time);
                n.duration = scale(n.duration);
            }
            for c in &mut track.chords {
                c.time = scale(c.time);
                c.duration = scale(c.duration);
            }
            for l in &mut track.lyrics {
                l.time = scale(l.time);
            }
        }
        self.resolution = target;
        Ok(())
    }

    /// Latest note offset over all tracks; 0 when there are no notes.
    pub fn end_time(&self) -> Tick {
        self.notes().map(|n| n.end()).max().unwrap_or(0)
    }

    /// Wall-clock length from tick 0 to [`Music::end_time`], integrating the
    /// tempo map. 120 qpm applies before the first tempo event.
    pub fn duration_seconds(&self) -> f64 {
        self.seconds_at(self.end_time())
    }

    /// Wall-clock time of `tick` under the tempo map.
    pub fn seconds_at(&self, tick: Tick) -> f64 {
        let mut tempos: Vec<&Tempo> = self.tempos.iter().collect();
        tempos.sort_by_key(|t| t.time);
        let resolution = self.resolution.max(1) as f64;
        let mut qpm = DEFAULT_QPM;
        let mut cursor: Tick = 0;
        let mut seconds = 0.0;
        for tempo in tempos {
            if tempo.time >= tick {
                break;
            }
            seconds += (tempo.time - cursor) as f64 / resolution * 60.0 / qpm;
            cursor = tempo.time;
            qpm = tempo.qpm;
        }
        seconds + (tick - cursor) as f64 / resolution * 60.0 / qpm
    }

    /// All notes of all tracks.
    pub fn notes(&self) -> impl Iterator<Item = &Note> + '_ {
        self.tracks.iter().flat_map(|t| t.notes.iter())
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(|t| t.notes.len()).sum()
    }
}
