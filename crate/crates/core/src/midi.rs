//! Standard MIDI File (format 0 and 1) reading and writing.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::diagnostics::Diagnostics;
use crate::error::{Error, Result};
use crate::model::{
    KeySignature, Lyric, Metadata, Mode, Music, Note, SourceFormat, Tempo, Tick, TimeSignature,
    Track,
};
use crate::theory;

/// Largest value a four-byte variable-length quantity can hold.
pub const VLQ_MAX: u32 = (1 << 28) - 1;

const DRUM_CHANNEL: u8 = 9;

/// One track event after running-status resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawMidiEvent {
    pub delta: u32,
    pub status: u8,
    /// Data bytes. For meta events the first byte is the meta type.
    pub payload: Vec<u8>,
}

/// Decodes a variable-length quantity starting at `offset`.
/// Returns the value and the number of bytes consumed.
pub fn read_vlq(bytes: &[u8], offset: usize) -> Result<(u32, usize)> {
    let mut value: u32 = 0;
    for i in 0..4 {
        let b = *bytes
            .get(offset + i)
            .ok_or_else(|| Error::Truncated(format!("variable-length quantity at offset {offset}")))?;
        value = (value << 7) | (b & 0x7f) as u32;
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    Err(Error::MalformedVlq(offset))
}

pub fn write_vlq(value: u32, out: &mut Vec<u8>) -> Result<()> {
    if value > VLQ_MAX {
        return Err(Error::Range(format!(
            "{value} does not fit in a variable-length quantity"
        )));
    }
    let mut groups = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        groups[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(groups[i] | cont);
    }
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Truncated(what.to_string()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn byte(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn vlq(&mut self) -> Result<u32> {
        let (v, n) = read_vlq(self.data, self.pos)?;
        self.pos += n;
        Ok(v)
    }

    fn done(&self) -> bool {
        self.pos >= self.data.len()
    }
}

/// Splits one `MTrk` chunk body into events. Stops at end-of-track.
pub fn parse_track_events(data: &[u8]) -> Result<Vec<RawMidiEvent>> {
    let mut cur = Cursor { data, pos: 0 };
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    while !cur.done() {
        let delta = cur.vlq()?;
        let first = cur.byte("event status")?;
        match first {
            0xff => {
                let kind = cur.byte("meta event type")?;
                let len = cur.vlq()? as usize;
                let body = cur.take(len, "meta event data")?;
                let mut payload = Vec::with_capacity(len + 1);
                payload.push(kind);
                payload.extend_from_slice(body);
                running = None;
                events.push(RawMidiEvent { delta, status: 0xff, payload });
                if kind == 0x2f {
                    break;
                }
            }
            0xf0 | 0xf7 => {
                let len = cur.vlq()? as usize;
                let body = cur.take(len, "sysex data")?;
                running = None;
                events.push(RawMidiEvent { delta, status: first, payload: body.to_vec() });
            }
            0xf1..=0xfe => {
                return Err(Error::Format(format!(
                    "system message 0x{first:02x} is not allowed in a track"
                )))
            }
            _ => {
                let (status, mut payload) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, Vec::with_capacity(2))
                } else {
                    let s = running.ok_or_else(|| {
                        Error::Format("data byte without a running status".into())
                    })?;
                    (s, vec![first])
                };
                let needed = match status >> 4 {
                    0xc | 0xd => 1,
                    _ => 2,
                };
                while payload.len() < needed {
                    payload.push(cur.byte("channel message data")?);
                }
                if payload.iter().any(|b| b & 0x80 != 0) {
                    return Err(Error::Format(format!(
                        "status byte inside channel message 0x{status:02x}"
                    )));
                }
                events.push(RawMidiEvent { delta, status, payload });
            }
        }
    }
    Ok(events)
}

fn decode_text(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

pub fn read_midi(bytes: &[u8]) -> Result<Music> {
    read_midi_with_diagnostics(bytes).map(|(m, _)| m)
}

/// Parses an SMF. Recoverable anomalies are counted in the returned diagnostics:
/// `unmatched_note_off`, `unclosed_note`, `key_signature_events`,
/// `invalid_key_signature`, `invalid_tempo`, `invalid_time_signature`,
/// `dropped_lyric`, `sysex_skipped`, `missing_end_of_track`.
pub fn read_midi_with_diagnostics(bytes: &[u8]) -> Result<(Music, Diagnostics)> {
    let mut cur = Cursor { data: bytes, pos: 0 };
    let magic = cur.take(4, "header magic").map_err(|_| Error::Format("not a MIDI file".into()))?;
    if magic != b"MThd" {
        return Err(Error::Format("missing MThd header".into()));
    }
    let len = u32::from_be_bytes(cur.take(4, "header length")?.try_into().unwrap()) as usize;
    if len < 6 {
        return Err(Error::Format(format!("header length {len} is shorter than 6")));
    }
    let header = cur.take(len, "header chunk")?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]) as usize;
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(Error::Unsupported(format!("SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(Error::Unsupported("SMPTE time division".into()));
    }
    if division == 0 {
        return Err(Error::Format("time division of 0 ticks per quarter".into()));
    }

    let mut chunks = Vec::new();
    while chunks.len() < ntracks {
        if cur.done() {
            return Err(Error::Truncated(format!(
                "header announces {ntracks} tracks, found {}",
                chunks.len()
            )));
        }
        let kind = cur.take(4, "chunk type")?;
        let len = u32::from_be_bytes(cur.take(4, "chunk length")?.try_into().unwrap()) as usize;
        let body = cur.take(len, "chunk body")?;
        if kind == b"MTrk" {
            chunks.push(body);
        }
    }

    let mut diag = Diagnostics::new();
    let mut music = Music::new(division as u32);
    music.metadata = Metadata::new(SourceFormat::Midi);

    for (index, chunk) in chunks.iter().enumerate() {
        let events = parse_track_events(chunk)?;
        if !matches!(events.last(), Some(e) if e.status == 0xff && e.payload[0] == 0x2f) {
            diag.record("missing_end_of_track");
        }
        let file_track = interpret_track(&events, &mut music, &mut diag);
        let has_notes = !file_track.channels.is_empty();
        if let Some(name) = &file_track.name {
            if index == 0 && (!has_notes || format == 0) && music.metadata.title.is_none() {
                music.metadata.title = Some(name.clone());
            }
        }
        let mut lyrics = Some(file_track.lyrics);
        for (channel, state) in file_track.channels {
            let mut track = Track::new(state.program, channel == DRUM_CHANNEL);
            track.name = file_track.name.clone();
            track.notes = state.notes;
            track.lyrics = lyrics.take().unwrap_or_default();
            music.tracks.push(track);
        }
        if let Some(l) = lyrics {
            diag.add("dropped_lyric", l.len());
        }
    }
    music.sort();
    Ok((music, diag))
}

#[derive(Default)]
struct ChannelNotes {
    program: u8,
    notes: Vec<Note>,
}

struct FileTrack {
    name: Option<String>,
    lyrics: Vec<Lyric>,
    channels: BTreeMap<u8, ChannelNotes>,
}

fn interpret_track(events: &[RawMidiEvent], music: &mut Music, diag: &mut Diagnostics) -> FileTrack {
    let mut time: Tick = 0;
    let mut programs = [0u8; 16];
    let mut open: HashMap<(u8, u8), VecDeque<(Tick, u8)>> = HashMap::new();
    let mut out = FileTrack { name: None, lyrics: Vec::new(), channels: BTreeMap::new() };

    for ev in events {
        time += ev.delta as Tick;
        match ev.status {
            0xff => {
                let kind = ev.payload[0];
                let data = &ev.payload[1..];
                match kind {
                    0x02 if music.metadata.copyright.is_none() => {
                        music.metadata.copyright = Some(decode_text(data));
                    }
                    0x03 if out.name.is_none() => out.name = Some(decode_text(data)),
                    0x05 => out.lyrics.push(Lyric { time, text: decode_text(data) }),
                    0x51 if data.len() >= 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us == 0 {
                            diag.record("invalid_tempo");
                        } else {
                            music.tempos.push(Tempo { time, qpm: 60_000_000.0 / us as f64 });
                        }
                    }
                    0x58 if data.len() >= 2 => {
                        let (nn, dd) = (data[0], data[1]);
                        if nn == 0 || dd > 6 {
                            diag.record("invalid_time_signature");
                        } else {
                            music.time_signatures.push(TimeSignature {
                                time,
                                numerator: nn as u32,
                                denominator: 1 << dd,
                            });
                        }
                    }
                    0x59 if data.len() >= 2 => {
                        diag.record("key_signature_events");
                        let sf = data[0] as i8 as i32;
                        let mode = match data[1] {
                            0 => Some(Mode::Major),
                            1 => Some(Mode::Minor),
                            _ => None,
                        };
                        match mode {
                            Some(mode) if (-7..=7).contains(&sf) => {
                                music.key_signatures.push(KeySignature {
                                    time,
                                    root: theory::fifths_to_root(sf, mode),
                                    mode,
                                });
                            }
                            _ => diag.record("invalid_key_signature"),
                        }
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => diag.record("sysex_skipped"),
            status => {
                let channel = status & 0x0f;
                match status >> 4 {
                    0x9 if ev.payload[1] > 0 => {
                        let pitch = ev.payload[0];
                        out.channels.entry(channel).or_insert_with(|| ChannelNotes {
                            program: programs[channel as usize],
                            notes: Vec::new(),
                        });
                        open.entry((channel, pitch))
                            .or_default()
                            .push_back((time, ev.payload[1]));
                    }
                    0x8 | 0x9 => {
                        let pitch = ev.payload[0];
                        match open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                            Some((start, velocity)) => {
                                out.channels.entry(channel).or_default().notes.push(Note::new(
                                    start,
                                    pitch,
                                    time - start,
                                    velocity,
                                ));
                            }
                            None => diag.record("unmatched_note_off"),
                        }
                    }
                    0xc => programs[channel as usize] = ev.payload[0],
                    _ => {}
                }
            }
        }
    }

    let mut leftovers: Vec<_> = open.into_iter().collect();
    leftovers.sort_by_key(|(k, _)| *k);
    for ((channel, pitch), queue) in leftovers {
        for (start, velocity) in queue {
            diag.record("unclosed_note");
            out.channels
                .entry(channel)
                .or_default()
                .notes
                .push(Note::new(start, pitch, time - start, velocity));
        }
    }
    out
}

struct TimedEvent {
    time: Tick,
    class: u8,
    order: (Tick, u8),
    bytes: Vec<u8>,
}

fn meta(kind: u8, data: &[u8]) -> Vec<u8> {
    let mut out = vec![0xff, kind];
    write_vlq(data.len() as u32, &mut out).expect("meta length");
    out.extend_from_slice(data);
    out
}

fn encode_track(mut events: Vec<TimedEvent>) -> Result<Vec<u8>> {
    events.sort_by_key(|e| (e.time, e.class, e.order));
    let mut body = Vec::new();
    let mut last_time = 0;
    let mut running: Option<u8> = None;
    for e in &events {
        let delta = e.time - last_time;
        if delta > VLQ_MAX as Tick {
            return Err(Error::Range(format!(
                "gap of {delta} ticks exceeds the largest MIDI delta time"
            )));
        }
        write_vlq(delta as u32, &mut body)?;
        last_time = e.time;
        let status = e.bytes[0];
        if status < 0xf0 {
            if running == Some(status) {
                body.extend_from_slice(&e.bytes[1..]);
            } else {
                body.extend_from_slice(&e.bytes);
            }
            running = Some(status);
        } else {
            body.extend_from_slice(&e.bytes);
            running = None;
        }
    }
    body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
    let mut chunk = Vec::with_capacity(body.len() + 8);
    chunk.extend_from_slice(b"MTrk");
    chunk.extend_from_slice(&(body.len() as u32).to_be_bytes());
    chunk.extend_from_slice(&body);
    Ok(chunk)
}

/// Channel for each track: drums on channel 9, the rest round-robin skipping 9.
pub fn assign_channels(tracks: &[Track]) -> Result<Vec<u8>> {
    let melodic = tracks.iter().filter(|t| !t.is_drum).count();
    if melodic > 15 {
        return Err(Error::ChannelExhaustion(melodic));
    }
    let mut pool = (0u8..16).filter(|&c| c != DRUM_CHANNEL);
    Ok(tracks
        .iter()
        .map(|t| if t.is_drum { DRUM_CHANNEL } else { pool.next().unwrap() })
        .collect())
}

/// Writes a format-1 SMF. The first track carries title, copyright, tempo,
/// key and time-signature events; every [`Track`] becomes its own SMF track.
/// Velocity 0 cannot be expressed as a note-on and is written as 1.
pub fn write_midi(music: &Music) -> Result<Vec<u8>> {
    music.ensure_valid()?;
    if music.resolution > 0x7fff {
        return Err(Error::Range(format!(
            "resolution {} exceeds the SMF maximum of 32767",
            music.resolution
        )));
    }
    let channels = assign_channels(&music.tracks)?;

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&((music.tracks.len() + 1) as u16).to_be_bytes());
    out.extend_from_slice(&(music.resolution as u16).to_be_bytes());

    let mut conductor = Vec::new();
    let at = |time, order, bytes| TimedEvent { time, class: 0, order: (order, 0), bytes };
    if let Some(title) = &music.metadata.title {
        conductor.push(at(0, 0, meta(0x03, title.as_bytes())));
    }
    if let Some(c) = &music.metadata.copyright {
        conductor.push(at(0, 1, meta(0x02, c.as_bytes())));
    }
    for ts in &music.time_signatures {
        let dd = ts.denominator.trailing_zeros() as u8;
        conductor.push(at(ts.time, 2, meta(0x58, &[ts.numerator.min(255) as u8, dd, 24, 8])));
    }
    for k in &music.key_signatures {
        let sf = theory::root_to_fifths(k.root, k.mode) as i8 as u8;
        let mi = matches!(k.mode, Mode::Minor) as u8;
        conductor.push(at(k.time, 3, meta(0x59, &[sf, mi])));
    }
    for t in &music.tempos {
        let us = (60_000_000.0 / t.qpm).round().clamp(1.0, 0xff_ffff as f64) as u32;
        let b = us.to_be_bytes();
        conductor.push(at(t.time, 4, meta(0x51, &b[1..])));
    }
    out.extend(encode_track(conductor)?);

    for (track, &ch) in music.tracks.iter().zip(&channels) {
        let mut events = Vec::with_capacity(track.notes.len() * 2 + 2);
        if let Some(name) = &track.name {
            events.push(at(0, 0, meta(0x03, name.as_bytes())));
        }
        events.push(at(0, 1, vec![0xc0 | ch, track.program]));
        for l in &track.lyrics {
            events.push(TimedEvent { time: l.time, class: 0, order: (2, 0), bytes: meta(0x05, l.text.as_bytes()) });
        }
        for n in &track.notes {
            let on = vec![0x90 | ch, n.pitch, n.velocity.max(1)];
            let off = vec![0x80 | ch, n.pitch, 0x40];
            // At equal ticks: earlier notes end, then new notes start (shorter
            // first so FIFO matching pairs them), then zero-length notes end.
            events.push(TimedEvent { time: n.time, class: 2, order: (n.duration, n.pitch), bytes: on });
            let class = if n.duration == 0 { 3 } else { 1 };
            events.push(TimedEvent { time: n.end(), class, order: (0, n.pitch), bytes: off });
        }
        out.extend(encode_track(events)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vlq_examples() {
        assert_eq!(read_vlq(&[0x00], 0).unwrap(), (0, 1));
        assert_eq!(read_vlq(&[0x81, 0x48], 0).unwrap(), (200, 2));
        assert_eq!(read_vlq(&[0xff, 0xff, 0xff, 0x7f], 0).unwrap(), (268_435_455, 4));
        assert!(matches!(read_vlq(&[0x80, 0x80, 0x80, 0x80, 0x00], 0), Err(Error::MalformedVlq(0))));
        assert!(matches!(read_vlq(&[0x81], 0), Err(Error::Truncated(_))));
        assert!(matches!(read_vlq(&[], 0), Err(Error::Truncated(_))));
    }

    #[test]
    fn vlq_write() {
        let mut out = Vec::new();
        write_vlq(200, &mut out).unwrap();
        assert_eq!(out, [0x81, 0x48]);
        assert!(write_vlq(VLQ_MAX + 1, &mut Vec::new()).is_err());
    }

    fn smf(format: u16, division: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = b"MThd\x00\x00\x00\x06".to_vec();
        out.extend(format.to_be_bytes());
        out.extend((tracks.len() as u16).to_be_bytes());
        out.extend(division.to_be_bytes());
        for t in tracks {
            out.extend(b"MTrk");
            out.extend((t.len() as u32).to_be_bytes());
            out.extend(*t);
        }
        out
    }

    #[test]
    fn minimal_note() {
        let track: &[u8] = &[
            0x00, 0x90, 60, 64, // note on
            0x60, 0x80, 60, 0, // 96 ticks later, note off
            0x00, 0xff, 0x2f, 0x00,
        ];
        let m = read_midi(&smf(0, 96, &[track])).unwrap();
        assert_eq!(m.resolution, 96);
        assert_eq!(m.tracks.len(), 1);
        assert_eq!(m.tracks[0].notes, [Note::new(0, 60, 96, 64)]);
    }

    #[test]
    fn tempo_meta() {
        let track: &[u8] = &[0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, 0x00, 0xff, 0x2f, 0x00];
        let m = read_midi(&smf(1, 24, &[track])).unwrap();
        assert_eq!(m.tempos, [Tempo { time: 0, qpm: 120.0 }]);
        assert!(m.tracks.is_empty());
    }

    #[test]
    fn running_status_velocity_zero_and_fifo() {
        let track: &[u8] = &[
            0x00, 0x99, 36, 100, // drum note on, channel 9
            0x00, 36, 90, // running status: second on, same pitch
            0x0a, 36, 0, // off (vel 0) -> closes first
            0x0a, 36, 0, // closes second
            0x00, 0x89, 40, 0, // orphan off
            0x00, 0xff, 0x2f, 0x00,
        ];
        let (m, d) = read_midi_with_diagnostics(&smf(0, 24, &[track])).unwrap();
        assert!(m.tracks[0].is_drum);
        assert_eq!(m.tracks[0].notes, [Note::new(0, 36, 10, 100), Note::new(0, 36, 20, 90)]);
        assert_eq!(d.count("unmatched_note_off"), 1);
    }

    #[test]
    fn unclosed_note_closed_at_track_end() {
        let track: &[u8] = &[0x00, 0x90, 60, 64, 0x30, 0xff, 0x2f, 0x00];
        let (m, d) = read_midi_with_diagnostics(&smf(0, 24, &[track])).unwrap();
        assert_eq!(m.tracks[0].notes, [Note::new(0, 60, 0x30, 64)]);
        assert_eq!(d.count("unclosed_note"), 1);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(read_midi(b"RIFF0000"), Err(Error::Format(_))));
        assert!(matches!(read_midi(&smf(0, 0xe728, &[])), Err(Error::Unsupported(_))));
        assert!(matches!(read_midi(&smf(2, 24, &[])), Err(Error::Unsupported(_))));
        let mut truncated = smf(0, 24, &[&[0x00, 0x90, 60, 64, 0x00, 0xff, 0x2f, 0x00]]);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(read_midi(&truncated), Err(Error::Truncated(_))));
    }

    #[test]
    fn key_signature_meta() {
        let track: &[u8] = &[0x00, 0xff, 0x59, 0x02, 0xfd, 0x01, 0x00, 0xff, 0x2f, 0x00];
        let (m, d) = read_midi_with_diagnostics(&smf(1, 24, &[track])).unwrap();
        assert_eq!(m.key_signatures, [KeySignature { time: 0, root: 0, mode: Mode::Minor }]);
        assert_eq!(d.count("key_signature_events"), 1);
    }

    #[test]
    fn drum_track_written_on_channel_nine() {
        let mut m = Music::new(24);
        m.tracks.push(Track::new(0, true).with_notes(vec![Note::new(0, 36, 12, 100)]));
        let bytes = write_midi(&m).unwrap();
        assert!(bytes.windows(3).any(|w| w == [0x99, 36, 100]));
        assert!(bytes.windows(3).any(|w| w == [0x89, 36, 0x40]));
        let back = read_midi(&bytes).unwrap();
        assert!(back.tracks[0].is_drum);
    }

    #[test]
    fn empty_music_writes_meta_track_only() {
        let bytes = write_midi(&Music::new(24)).unwrap();
        assert_eq!(&bytes[8..14], &[0, 1, 0, 1, 0, 24]);
        let back = read_midi(&bytes).unwrap();
        assert!(back.tracks.is_empty());
        assert_eq!(back.resolution, 24);
    }

    #[test]
    fn channel_exhaustion() {
        let mut m = Music::new(24);
        m.tracks = (0..16).map(|_| Track::new(0, false)).collect();
        assert!(matches!(write_midi(&m), Err(Error::ChannelExhaustion(16))));
        m.tracks.pop();
        m.tracks.push(Track::new(0, true));
        let ch = assign_channels(&m.tracks).unwrap();
        assert_eq!(ch[..10], [0, 1, 2, 3, 4, 5, 6, 7, 8, 10]);
        assert_eq!(ch[15], 9);
    }

    #[test]
    fn zero_duration_and_back_to_back_notes_round_trip() {
        let mut m = Music::new(24);
        m.tracks.push(Track::new(5, false).with_notes(vec![
            Note::new(0, 60, 4, 80),
            Note::new(4, 60, 0, 81),
            Note::new(4, 60, 2, 82),
            Note::new(6, 62, 0, 83),
        ]));
        let back = read_midi(&write_midi(&m).unwrap()).unwrap();
        assert_eq!(back.tracks[0].notes, m.tracks[0].notes);
        assert_eq!(back.tracks[0].program, 5);
    }
}
