use super::{EncodedSequence, Encoding};
use crate::error::{Error, Result};
use crate::model::{Music, Note, Tick, Track, DEFAULT_VELOCITY};

pub const PITCH_HOLD: u32 = 128;
pub const PITCH_REST: u32 = 129;
pub const PITCH_VOCAB_SIZE: usize = 130;

/// What to do when two notes sound at once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    /// Fail with a polyphony error naming the first offending tick.
    #[default]
    Error,
    /// At each step, the highest sounding pitch wins.
    KeepHighest,
    /// A note that starts while another sounds is dropped.
    SkipNew,
}

/// One token per step up to the end of the last note.
pub fn encode_pitch(music: &Music, policy: OverlapPolicy) -> Result<EncodedSequence> {
    encode_pitch_with_length(music, policy, None)
}

/// Like [`encode_pitch`], but truncated or rest-padded to `length` steps.
/// Zero-length notes occupy one step.
pub fn encode_pitch_with_length(
    music: &Music,
    policy: OverlapPolicy,
    length: Option<u64>,
) -> Result<EncodedSequence> {
    let mut notes: Vec<&Note> = music.notes().collect();
    notes.sort_by_key(|n| (n.time, n.pitch));
    let span = |n: &Note| (n.time, n.time + n.duration.max(1));
    let natural = notes.iter().map(|n| span(n).1).max().unwrap_or(0);
    let steps = length.unwrap_or(natural) as usize;

    // Per step: index of the note owning that step, if any.
    let mut owner: Vec<Option<usize>> = vec![None; steps];
    match policy {
        OverlapPolicy::Error | OverlapPolicy::SkipNew => {
            let mut busy_until: Tick = 0;
            for (i, n) in notes.iter().enumerate() {
                let (start, end) = span(n);
                if start < busy_until {
                    if policy == OverlapPolicy::Error {
                        return Err(Error::Polyphony { tick: start });
                    }
                    continue;
                }
                busy_until = end;
                for slot in owner.iter_mut().take(end as usize).skip(start as usize) {
                    *slot = Some(i);
                }
            }
        }
        OverlapPolicy::KeepHighest => {
            for (i, n) in notes.iter().enumerate() {
                let (start, end) = span(n);
                for slot in owner.iter_mut().take(end as usize).skip(start as usize) {
                    if slot.map_or(true, |j| notes[j].pitch <= n.pitch) {
                        *slot = Some(i);
                    }
                }
            }
        }
    }

    let mut tokens = Vec::with_capacity(steps);
    let mut prev = None;
    for (t, slot) in owner.iter().enumerate() {
        tokens.push(match *slot {
            None => PITCH_REST,
            Some(i) if prev == Some(i) && notes[i].time != t as Tick => PITCH_HOLD,
            Some(i) => notes[i].pitch as u32,
        });
        prev = *slot;
    }
    Ok(EncodedSequence {
        tokens,
        encoding: Encoding::Pitch,
        resolution: music.resolution,
    })
}

/// Pitch tokens start notes, holds extend them, rests end them. Decoded notes
/// carry the default velocity.
pub fn decode_pitch(seq: &EncodedSequence) -> Result<Music> {
    if seq.encoding != Encoding::Pitch {
        return Err(Error::Domain("not a pitch-encoded sequence".into()));
    }
    seq.check_vocabulary()?;
    let mut notes = Vec::new();
    let mut current: Option<Note> = None;
    for (t, &tok) in seq.tokens.iter().enumerate() {
        let t = t as Tick;
        match tok {
            PITCH_HOLD => match current.as_mut() {
                Some(n) => n.duration += 1,
                None if t == 0 => return Err(Error::Domain("sequence starts with a hold token".into())),
                None => return Err(Error::Domain(format!("hold token at step {t} follows a rest"))),
            },
            PITCH_REST => notes.extend(current.take()),
            p => {
                notes.extend(current.take());
                current = Some(Note::new(t, p as u8, 1, DEFAULT_VELOCITY));
            }
        }
    }
    notes.extend(current);
    let mut music = Music::new(seq.resolution);
    music.tracks.push(Track::new(0, false).with_notes(notes));
    Ok(music)
}
