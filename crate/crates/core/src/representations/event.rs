use std::collections::{HashMap, VecDeque};

use super::{EncodedSequence, Encoding};
use crate::diagnostics::Diagnostics;
use crate::error::{Error, Result};
use crate::model::{Music, Note, Tick, Track, DEFAULT_VELOCITY};

/// Layout of the event vocabulary.
///
/// Tokens are laid out as note-on `0..128`, note-off `128..256`, time-shift
/// `256..256 + max_time_shift` (shift `t` is `255 + t`), then the velocity
/// bins when enabled, then end-of-sequence when enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EventConfig {
    pub use_velocity: bool,
    pub velocity_bins: u32,
    pub max_time_shift: u32,
    pub use_end_of_sequence: bool,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig {
            use_velocity: true,
            velocity_bins: 32,
            max_time_shift: 100,
            use_end_of_sequence: false,
        }
    }
}

impl EventConfig {
    /// No velocity, end-of-sequence enabled: 357 tokens.
    pub fn experiment() -> Self {
        EventConfig {
            use_velocity: false,
            use_end_of_sequence: true,
            ..EventConfig::default()
        }
    }

    pub const NOTE_ON: u32 = 0;
    pub const NOTE_OFF: u32 = 128;
    pub const TIME_SHIFT: u32 = 256;

    pub fn velocity_offset(&self) -> u32 {
        Self::TIME_SHIFT + self.max_time_shift
    }

    pub fn end_of_sequence(&self) -> Option<u32> {
        self.use_end_of_sequence.then(|| {
            self.velocity_offset() + if self.use_velocity { self.velocity_bins } else { 0 }
        })
    }

    pub fn vocab_size(&self) -> usize {
        (256 + self.max_time_shift
            + if self.use_velocity { self.velocity_bins } else { 0 }
            + self.use_end_of_sequence as u32) as usize
    }

    pub fn velocity_bin(&self, velocity: u8) -> u32 {
        (velocity as u32 * self.velocity_bins / 128).min(self.velocity_bins - 1)
    }

    /// Centre of a velocity bin (4b + 2 for 32 bins).
    pub fn bin_velocity(&self, bin: u32) -> u8 {
        ((2 * bin + 1) * 64 / self.velocity_bins).min(127) as u8
    }
}

/// Flattens every track into one token stream. At equal ticks, note-offs of
/// sounding notes come first, then note-ons (shorter notes first), then the
/// offs of zero-length notes.
pub fn encode_event(music: &Music, config: &EventConfig) -> EncodedSequence {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Boundary {
        time: Tick,
        class: u8,
        duration: Tick,
        pitch: u8,
        velocity: u8,
    }
    let mut boundaries = Vec::with_capacity(music.note_count() * 2);
    for n in music.notes() {
        boundaries.push(Boundary { time: n.time, class: 1, duration: n.duration, pitch: n.pitch, velocity: n.velocity });
        let class = if n.duration == 0 { 2 } else { 0 };
        boundaries.push(Boundary { time: n.end(), class, duration: 0, pitch: n.pitch, velocity: 0 });
    }
    boundaries.sort();

    let max_shift = config.max_time_shift.max(1) as Tick;
    let mut tokens = Vec::with_capacity(boundaries.len() * 2);
    let mut now: Tick = 0;
    let mut bin: Option<u32> = None;
    for b in boundaries {
        let mut delta = b.time - now;
        while delta > 0 {
            let step = delta.min(max_shift);
            tokens.push(EventConfig::TIME_SHIFT - 1 + step as u32);
            delta -= step;
        }
        now = b.time;
        if b.class == 1 {
            if config.use_velocity {
                let v = config.velocity_bin(b.velocity);
                if bin != Some(v) {
                    tokens.push(config.velocity_offset() + v);
                    bin = Some(v);
                }
            }
            tokens.push(EventConfig::NOTE_ON + b.pitch as u32);
        } else {
            tokens.push(EventConfig::NOTE_OFF + b.pitch as u32);
        }
    }
    if let Some(eos) = config.end_of_sequence() {
        tokens.push(eos);
    }
    EncodedSequence {
        tokens,
        encoding: Encoding::Event(*config),
        resolution: music.resolution,
    }
}

pub fn decode_event(seq: &EncodedSequence) -> Result<Music> {
    decode_event_with_diagnostics(seq).map(|(m, _)| m)
}

/// Rebuilds a single-track Music. Note-offs close the earliest open note of
/// the same pitch; notes still open at the end close at the final time.
/// Decoding stops at end-of-sequence. Counts `orphan_note_off` and
/// `unclosed_note`.
pub fn decode_event_with_diagnostics(seq: &EncodedSequence) -> Result<(Music, Diagnostics)> {
    let Encoding::Event(config) = seq.encoding else {
        return Err(Error::Domain("not an event-encoded sequence".into()));
    };
    seq.check_vocabulary()?;
    let eos = config.end_of_sequence();
    let vel_start = config.velocity_offset();
    let vel_end = vel_start + if config.use_velocity { config.velocity_bins } else { 0 };

    let mut diag = Diagnostics::new();
    let mut now: Tick = 0;
    let mut velocity = DEFAULT_VELOCITY;
    let mut open: HashMap<u8, VecDeque<(Tick, u8)>> = HashMap::new();
    let mut notes = Vec::new();
    for &tok in &seq.tokens {
        if Some(tok) == eos {
            break;
        }
        match tok {
            t if t < EventConfig::NOTE_OFF => {
                open.entry(t as u8).or_default().push_back((now, velocity));
            }
            t if t < EventConfig::TIME_SHIFT => {
                let pitch = (t - EventConfig::NOTE_OFF) as u8;
                match open.get_mut(&pitch).and_then(|q| q.pop_front()) {
                    Some((start, v)) => notes.push(Note::new(start, pitch, now - start, v)),
                    None => diag.record("orphan_note_off"),
                }
            }
            t if t < vel_start => now += (t - EventConfig::TIME_SHIFT + 1) as Tick,
            t if t < vel_end => velocity = config.bin_velocity(t - vel_start),
            t => return Err(Error::Domain(format!("token {t} has no meaning in this configuration"))),
        }
    }
    let mut pitches: Vec<_> = open.into_iter().collect();
    pitches.sort_by_key(|(p, _)| *p);
    for (pitch, queue) in pitches {
        for (start, v) in queue {
            diag.record("unclosed_note");
            notes.push(Note::new(start, pitch, now - start, v));
        }
    }
    let mut music = Music::new(seq.resolution);
    music.tracks.push(Track::new(0, false).with_notes(notes));
    music.sort();
    Ok((music, diag))
}
