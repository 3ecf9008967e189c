//! MusicXML (score-partwise) reading and writing, plus the compressed `.mxl`
//! container.
//!
//! Repeats and endings are read as a single pass. Grace notes are skipped and
//! counted in the diagnostics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Cursor, Read, Write};

use roxmltree::{Document, Node, ParsingOptions};

use crate::diagnostics::Diagnostics;
use crate::error::{Error, Result};
use crate::model::{
    KeySignature, Lyric, Metadata, Mode, Music, Note, SourceFormat, Tempo, Tick, TimeSignature,
    Track, DEFAULT_VELOCITY, VALID_DENOMINATORS,
};
use crate::theory;

/// MIDI velocity of MusicXML dynamics 100 (forte).
const FORTE_VELOCITY: f64 = 90.0;

/// MIDI pitch number of a MusicXML pitch element.
pub fn pitch_to_midi(step: char, alter: i32, octave: i32) -> Result<u8> {
    let semitone = theory::step_semitone(step)
        .ok_or_else(|| Error::Range(format!("invalid step {step:?}")))?;
    let pitch = (octave + 1) * 12 + semitone + alter;
    if (0..=127).contains(&pitch) {
        Ok(pitch as u8)
    } else {
        Err(Error::Range(format!(
            "pitch {step}{alter:+}/{octave} maps to {pitch}, outside [0, 127]"
        )))
    }
}

fn midi_to_pitch(pitch: u8) -> (char, i32, i32) {
    const SPELLING: [(char, i32); 12] = [
        ('C', 0),
        ('C', 1),
        ('D', 0),
        ('D', 1),
        ('E', 0),
        ('F', 0),
        ('F', 1),
        ('G', 0),
        ('G', 1),
        ('A', 0),
        ('A', 1),
        ('B', 0),
    ];
    let (step, alter) = SPELLING[(pitch % 12) as usize];
    (step, alter, pitch as i32 / 12 - 1)
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(node: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

fn parse_num<T: std::str::FromStr>(node: Node<'_, '_>, name: &str) -> Result<Option<T>> {
    match child_text(node, name) {
        None => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| {
            Error::Schema(format!("<{name}> has non-numeric content {s:?}"))
        }),
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn xml_error(e: roxmltree::Error) -> Error {
    let pos = e.pos();
    Error::Parse {
        line: pos.row as usize,
        column: pos.col as usize,
        message: e.to_string(),
    }
}

pub fn read_musicxml(text: &str) -> Result<Music> {
    read_musicxml_with_diagnostics(text).map(|(m, _)| m)
}

/// Per-part reading state.
struct PartState {
    divisions: Option<u64>,
    /// Ticks per division at the score resolution.
    scale: u64,
    cursor: Tick,
    last_onset: Tick,
    velocity: u8,
    /// Open tied note per pitch, as an index into `notes`.
    pending_ties: HashMap<u8, usize>,
    notes: Vec<Note>,
    lyrics: Vec<Lyric>,
}

/// Signature and tempo events collected from every part before de-duplication.
#[derive(Default)]
struct Globals {
    tempos: Vec<Tempo>,
    keys: Vec<KeySignature>,
    times: Vec<TimeSignature>,
}

pub fn read_musicxml_with_diagnostics(text: &str) -> Result<(Music, Diagnostics)> {
    let opts = ParsingOptions { allow_dtd: true, ..ParsingOptions::default() };
    let doc = Document::parse_with_options(text, opts).map_err(xml_error)?;
    let root = doc.root_element();
    match root.tag_name().name() {
        "score-partwise" => {}
        "score-timewise" => return Err(Error::Unsupported("score-timewise MusicXML".into())),
        other => return Err(Error::Format(format!("unexpected root element <{other}>"))),
    }

    let mut diag = Diagnostics::new();

    let divisions: Vec<u64> = root
        .descendants()
        .filter(|n| n.has_tag_name("divisions"))
        .map(|n| {
            n.text()
                .map(str::trim)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|&d| d >= 1.0 && d.fract() == 0.0)
                .map(|d| d as u64)
                .ok_or_else(|| Error::Schema(format!("invalid <divisions> {:?}", n.text())))
        })
        .collect::<Result<_>>()?;
    let resolution = divisions.iter().fold(1u64, |acc, &d| acc / gcd(acc, d) * d);
    if resolution > u32::MAX as u64 {
        return Err(Error::Range("least common multiple of divisions is too large".into()));
    }

    let mut music = Music::new(resolution as u32);
    music.metadata = Metadata::new(SourceFormat::Musicxml);
    music.metadata.title = child(root, "work")
        .and_then(|w| child_text(w, "work-title"))
        .or_else(|| child_text(root, "movement-title"))
        .filter(|s| !s.is_empty())
        .map(String::from);
    if let Some(ident) = child(root, "identification") {
        music.metadata.creators = ident
            .children()
            .filter(|c| c.has_tag_name("creator"))
            .filter_map(|c| c.text())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        music.metadata.copyright = child_text(ident, "rights").map(String::from);
    }

    // part-list: id -> (name, program, is_drum)
    let mut part_info: HashMap<&str, (Option<String>, u8, bool)> = HashMap::new();
    if let Some(list) = child(root, "part-list") {
        for sp in list.children().filter(|c| c.has_tag_name("score-part")) {
            let id = sp.attribute("id").unwrap_or("");
            let name = child_text(sp, "part-name").filter(|s| !s.is_empty()).map(String::from);
            let mut program = 0u8;
            let mut drum = false;
            if let Some(mi) = child(sp, "midi-instrument") {
                if let Some(p) = parse_num::<i32>(mi, "midi-program")? {
                    program = (p - 1).clamp(0, 127) as u8;
                }
                drum = parse_num::<i32>(mi, "midi-channel")? == Some(10);
            }
            part_info.insert(id, (name, program, drum));
        }
    }

    let mut globals = Globals::default();
    for part in root.children().filter(|c| c.has_tag_name("part")) {
        let id = part.attribute("id").unwrap_or("");
        let (name, program, is_drum) = part_info.get(id).cloned().unwrap_or((None, 0, false));
        let mut state = PartState {
            divisions: None,
            scale: 1,
            cursor: 0,
            last_onset: 0,
            velocity: DEFAULT_VELOCITY,
            pending_ties: HashMap::new(),
            notes: Vec::new(),
            lyrics: Vec::new(),
        };
        read_part(part, resolution, &mut state, &mut globals, &mut diag)?;
        let mut track = Track::new(program, is_drum);
        track.name = name;
        track.notes = state.notes;
        track.lyrics = state.lyrics;
        music.tracks.push(track);
    }

    music.tempos = dedupe_keep_last(globals.tempos, |t| t.time);
    music.key_signatures = dedupe_keep_first(globals.keys, |k| k.time);
    music.time_signatures = dedupe_keep_first(globals.times, |t| t.time);
    music.sort();
    Ok((music, diag))
}

fn dedupe_keep_first<T, F: Fn(&T) -> Tick>(mut items: Vec<T>, key: F) -> Vec<T> {
    items.sort_by_key(|i| key(i));
    items.dedup_by(|b, a| key(a) == key(b));
    items
}

fn dedupe_keep_last<T, F: Fn(&T) -> Tick>(mut items: Vec<T>, key: F) -> Vec<T> {
    items.reverse();
    items.sort_by_key(|i| key(i));
    items.dedup_by(|b, a| key(a) == key(b));
    items
}

fn read_part(
    part: Node<'_, '_>,
    resolution: u64,
    st: &mut PartState,
    globals: &mut Globals,
    diag: &mut Diagnostics,
) -> Result<()> {
    let mut expected_measure: Option<Tick> = None;
    for (mi, measure) in part.children().filter(|c| c.has_tag_name("measure")).enumerate() {
        let start = st.cursor;
        let mut furthest = st.cursor;
        for el in measure.children().filter(|c| c.is_element()) {
            match el.tag_name().name() {
                "attributes" => read_attributes(el, resolution, st, globals, diag, &mut expected_measure)?,
                "note" => read_note(el, st, diag)?,
                "backup" => {
                    let d = duration_ticks(el, st)?;
                    st.cursor = st.cursor.saturating_sub(d);
                }
                "forward" => st.cursor += duration_ticks(el, st)?,
                "direction" => {
                    for dt in el.children().filter(|c| c.has_tag_name("direction-type")) {
                        if let Some(m) = child(dt, "metronome") {
                            match metronome_qpm(m) {
                                Some(qpm) => globals.tempos.push(Tempo { time: st.cursor, qpm }),
                                None => diag.record("unreadable_metronome"),
                            }
                        }
                    }
                    if let Some(s) = child(el, "sound") {
                        read_sound(s, st, globals, diag);
                    }
                }
                "sound" => read_sound(el, st, globals, diag),
                "barline" => {
                    if child(el, "repeat").is_some() || child(el, "ending").is_some() {
                        diag.record("repeat_discarded");
                    }
                }
                _ => {}
            }
            furthest = furthest.max(st.cursor);
        }
        st.cursor = furthest;
        if let Some(len) = expected_measure {
            let actual = furthest - start;
            if mi > 0 && actual != len && actual != 0 {
                diag.record("measure_length_mismatch");
            }
        }
    }
    Ok(())
}

fn duration_ticks(el: Node<'_, '_>, st: &PartState) -> Result<Tick> {
    let Some(raw) = child_text(el, "duration") else {
        return Ok(0);
    };
    if st.divisions.is_none() {
        return Err(Error::Schema("duration given before <divisions>".into()));
    }
    let d: f64 = raw
        .parse()
        .map_err(|_| Error::Schema(format!("non-numeric <duration> {raw:?}")))?;
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Schema(format!("negative <duration> {raw:?}")));
    }
    Ok((d * st.scale as f64).round() as Tick)
}

fn read_attributes(
    el: Node<'_, '_>,
    resolution: u64,
    st: &mut PartState,
    globals: &mut Globals,
    diag: &mut Diagnostics,
    expected_measure: &mut Option<Tick>,
) -> Result<()> {
    if let Some(d) = parse_num::<f64>(el, "divisions")? {
        let d = d as u64;
        st.divisions = Some(d);
        st.scale = resolution / d;
    }
    if let Some(key) = child(el, "key") {
        match parse_num::<i32>(key, "fifths")? {
            Some(fifths) if (-7..=7).contains(&fifths) => {
                let mode = match child_text(key, "mode") {
                    None | Some("major") | Some("none") => Some(Mode::Major),
                    Some("minor") => Some(Mode::Minor),
                    Some(_) => None,
                };
                match mode {
                    Some(mode) => globals.keys.push(KeySignature {
                        time: st.cursor,
                        root: theory::fifths_to_root(fifths, mode),
                        mode,
                    }),
                    None => diag.record("unsupported_key_mode"),
                }
            }
            Some(_) => diag.record("invalid_key_signature"),
            None => diag.record("non_traditional_key"),
        }
    }
    if let Some(time) = child(el, "time") {
        if child(time, "senza-misura").is_some() {
            diag.record("senza_misura");
        } else {
            let beats: Vec<_> = time.children().filter(|c| c.has_tag_name("beats")).collect();
            let types: Vec<_> = time.children().filter(|c| c.has_tag_name("beat-type")).collect();
            if beats.len() != 1 || types.len() != 1 {
                return Err(Error::Unsupported("composite time signature".into()));
            }
            let b = beats[0].text().unwrap_or("").trim();
            let t = types[0].text().unwrap_or("").trim();
            let (Ok(numerator), Ok(denominator)) = (b.parse::<u32>(), t.parse::<u32>()) else {
                return Err(Error::Unsupported(format!("time signature {b}/{t}")));
            };
            if numerator == 0 || !VALID_DENOMINATORS.contains(&denominator) {
                return Err(Error::Unsupported(format!("time signature {b}/{t}")));
            }
            let ts = TimeSignature { time: st.cursor, numerator, denominator };
            *expected_measure = ts.measure_ticks(resolution as u32);
            globals.times.push(ts);
        }
    }
    Ok(())
}

fn metronome_qpm(m: Node<'_, '_>) -> Option<f64> {
    let unit = match child_text(m, "beat-unit")? {
        "whole" => 4.0,
        "half" => 2.0,
        "quarter" => 1.0,
        "eighth" => 0.5,
        "16th" => 0.25,
        "32nd" => 0.125,
        "breve" => 8.0,
        _ => return None,
    };
    let dots = m.children().filter(|c| c.has_tag_name("beat-unit-dot")).count() as i32;
    let dotted = unit * (2.0 - 0.5f64.powi(dots));
    let per_minute: f64 = child_text(m, "per-minute")?.parse().ok()?;
    (per_minute > 0.0).then_some(per_minute * dotted)
}

fn read_sound(s: Node<'_, '_>, st: &mut PartState, globals: &mut Globals, diag: &mut Diagnostics) {
    if let Some(t) = s.attribute("tempo") {
        match t.trim().parse::<f64>() {
            Ok(qpm) if qpm > 0.0 && qpm.is_finite() => {
                globals.tempos.push(Tempo { time: st.cursor, qpm })
            }
            _ => diag.record("invalid_tempo"),
        }
    }
    if let Some(d) = s.attribute("dynamics") {
        match dynamics_velocity(d) {
            Some(v) => st.velocity = v,
            None => diag.record("invalid_dynamics"),
        }
    }
}

fn dynamics_velocity(raw: &str) -> Option<u8> {
    let d: f64 = raw.trim().parse().ok()?;
    (d >= 0.0 && d.is_finite()).then(|| (d * FORTE_VELOCITY / 100.0).round().min(127.0) as u8)
}

fn velocity_dynamics(velocity: u8) -> String {
    format!("{:.4}", velocity as f64 * 100.0 / FORTE_VELOCITY)
}

fn read_note(el: Node<'_, '_>, st: &mut PartState, diag: &mut Diagnostics) -> Result<()> {
    if child(el, "grace").is_some() {
        diag.record("grace_note_skipped");
        return Ok(());
    }
    let duration = duration_ticks(el, st)?;
    let is_chord = child(el, "chord").is_some();
    let onset = if is_chord { st.last_onset } else { st.cursor };
    if !is_chord {
        st.last_onset = st.cursor;
        st.cursor += duration;
    }
    if child(el, "rest").is_some() {
        return Ok(());
    }
    if child(el, "cue").is_some() {
        diag.record("cue_note_skipped");
        return Ok(());
    }
    let pitch = if let Some(p) = child(el, "pitch") {
        let step = child_text(p, "step")
            .and_then(|s| s.chars().next())
            .ok_or_else(|| Error::Schema("<pitch> without <step>".into()))?;
        let alter = parse_num::<f64>(p, "alter")?.unwrap_or(0.0);
        if alter.fract() != 0.0 {
            diag.record("microtone_rounded");
        }
        let octave = parse_num::<i32>(p, "octave")?
            .ok_or_else(|| Error::Schema("<pitch> without <octave>".into()))?;
        pitch_to_midi(step, alter.round() as i32, octave)?
    } else if let Some(u) = child(el, "unpitched") {
        let step = child_text(u, "display-step").and_then(|s| s.chars().next()).unwrap_or('C');
        let octave = parse_num::<i32>(u, "display-octave")?.unwrap_or(4);
        pitch_to_midi(step, 0, octave)?
    } else {
        return Err(Error::Schema("<note> without <pitch>, <unpitched> or <rest>".into()));
    };
    let velocity = match el.attribute("dynamics") {
        Some(d) => dynamics_velocity(d).unwrap_or(st.velocity),
        None => st.velocity,
    };

    let ties: Vec<&str> = el
        .children()
        .filter(|c| c.has_tag_name("tie"))
        .filter_map(|c| c.attribute("type"))
        .collect();
    let tie_stop = ties.contains(&"stop");
    let tie_start = ties.contains(&"start");

    let end = onset + duration;
    match (tie_stop, st.pending_ties.get(&pitch).copied()) {
        (true, Some(idx)) => {
            let n = &mut st.notes[idx];
            n.duration = end.max(n.end()) - n.time;
            if !tie_start {
                st.pending_ties.remove(&pitch);
            }
        }
        (stop, pending) => {
            if stop {
                diag.record("orphan_tie_stop");
            }
            if pending.is_some() {
                diag.record("unterminated_tie");
                st.pending_ties.remove(&pitch);
            }
            st.notes.push(Note::new(onset, pitch, duration, velocity));
            if tie_start {
                st.pending_ties.insert(pitch, st.notes.len() - 1);
            }
            for lyric in el.children().filter(|c| c.has_tag_name("lyric")) {
                let text: Vec<&str> = lyric
                    .children()
                    .filter(|c| c.has_tag_name("text"))
                    .filter_map(|c| c.text())
                    .collect();
                if !text.is_empty() {
                    st.lyrics.push(Lyric { time: onset, text: text.concat() });
                    break;
                }
            }
        }
    }
    Ok(())
}

/// Reads a compressed MusicXML archive.
pub fn read_mxl(bytes: &[u8]) -> Result<Music> {
    read_mxl_with_diagnostics(bytes).map(|(m, _)| m)
}

pub fn read_mxl_with_diagnostics(bytes: &[u8]) -> Result<(Music, Diagnostics)> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| Error::Archive(format!("not a zip archive: {e}")))?;
    let container = read_entry(&mut archive, "META-INF/container.xml")?;
    let doc = Document::parse(&container).map_err(|e| Error::Archive(format!("bad container.xml: {e}")))?;
    let rootfile = doc
        .descendants()
        .find(|n| n.has_tag_name("rootfile"))
        .and_then(|n| n.attribute("full-path"))
        .ok_or_else(|| Error::Archive("container.xml names no rootfile".into()))?
        .to_string();
    let text = read_entry(&mut archive, &rootfile)?;
    read_musicxml_with_diagnostics(&text)
}

fn read_entry(archive: &mut zip::ZipArchive<Cursor<&[u8]>>, name: &str) -> Result<String> {
    let mut file = archive
        .by_name(name)
        .map_err(|_| Error::Archive(format!("missing archive entry {name}")))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)
        .map_err(|e| Error::Archive(format!("cannot read {name}: {e}")))?;
    decode_xml_bytes(&raw).ok_or_else(|| Error::Archive(format!("{name} is not UTF-8 or UTF-16 text")))
}

/// Decodes XML bytes as UTF-8 (with optional BOM) or UTF-16 with BOM.
pub fn decode_xml_bytes(raw: &[u8]) -> Option<String> {
    match raw {
        [0xef, 0xbb, 0xbf, rest @ ..] => String::from_utf8(rest.to_vec()).ok(),
        [0xff, 0xfe, rest @ ..] => {
            let units: Vec<u16> = rest.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
            String::from_utf16(&units).ok()
        }
        [0xfe, 0xff, rest @ ..] => {
            let units: Vec<u16> = rest.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
            String::from_utf16(&units).ok()
        }
        _ => String::from_utf8(raw.to_vec()).ok(),
    }
}

/// Packs a MusicXML document into an `.mxl` archive.
pub fn write_mxl(music: &Music) -> Result<Vec<u8>> {
    let xml = write_musicxml(music)?;
    let mut buf = Cursor::new(Vec::new());
    {
        let mut zip = zip::ZipWriter::new(&mut buf);
        let opts = zip::write::SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Deflated);
        let io = |e: std::io::Error| Error::Archive(e.to_string());
        let z = |e: zip::result::ZipError| Error::Archive(e.to_string());
        zip.start_file("META-INF/container.xml", opts).map_err(z)?;
        zip.write_all(
            b"<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<container>\n  <rootfiles>\n    \
              <rootfile full-path=\"score.xml\" media-type=\"application/vnd.recordare.musicxml+xml\"/>\n  \
              </rootfiles>\n</container>\n",
        )
        .map_err(io)?;
        zip.start_file("score.xml", opts).map_err(z)?;
        zip.write_all(xml.as_bytes()).map_err(io)?;
        zip.finish().map_err(z)?;
    }
    Ok(buf.into_inner())
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Measure spans `[start, end)` covering `[0, total_end)`, cut at every
/// time-signature change.
fn measure_spans(music: &Music, total_end: Tick) -> Vec<(Tick, Tick)> {
    let res = music.resolution as u64;
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        let ts = music.time_signatures.iter().filter(|t| t.time <= start).last();
        let len = match ts {
            Some(ts) => ts.measure_ticks(music.resolution).unwrap_or_else(|| {
                ((ts.numerator as u64 * 4 * res).div_ceil(ts.denominator as u64)).max(1)
            }),
            None => 4 * res,
        };
        let mut end = start + len;
        if let Some(next) = music.time_signatures.iter().map(|t| t.time).find(|&t| t > start && t < end) {
            end = next;
        }
        spans.push((start, end));
        start = end;
        if start >= total_end {
            break;
        }
    }
    spans
}

enum Item<'a> {
    Attributes { key: Option<&'a KeySignature>, time: Option<&'a TimeSignature> },
    Tempo(f64),
    Note { pitch: u8, duration: Tick, velocity: u8, stop: bool, start: bool, lyric: Option<&'a str> },
}

/// Writes a score-partwise document with `divisions` equal to the resolution.
/// Every track becomes one part; notes crossing barlines are split and tied.
pub fn write_musicxml(music: &Music) -> Result<String> {
    music.ensure_valid()?;
    let music = music.clone().sorted();
    let total_end = music
        .notes()
        .map(|n| n.end().max(n.time + 1))
        .chain(music.tempos.iter().map(|t| t.time + 1))
        .chain(music.key_signatures.iter().map(|k| k.time + 1))
        .chain(music.time_signatures.iter().map(|t| t.time + 1))
        .max()
        .unwrap_or(0);
    let spans = measure_spans(&music, total_end);

    let empty = [Track::default()];
    let tracks: &[Track] = if music.tracks.is_empty() { &empty } else { &music.tracks };

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
    out.push_str("<!DOCTYPE score-partwise PUBLIC \"-//Recordare//DTD MusicXML 3.1 Partwise//EN\" \"http://www.musicxml.org/dtds/partwise.dtd\">\n");
    out.push_str("<score-partwise version=\"3.1\">\n");
    if let Some(title) = &music.metadata.title {
        let _ = writeln!(out, "  <work>\n    <work-title>{}</work-title>\n  </work>", escape(title));
    }
    if !music.metadata.creators.is_empty() || music.metadata.copyright.is_some() {
        out.push_str("  <identification>\n");
        for c in &music.metadata.creators {
            let _ = writeln!(out, "    <creator type=\"composer\">{}</creator>", escape(c));
        }
        if let Some(r) = &music.metadata.copyright {
            let _ = writeln!(out, "    <rights>{}</rights>", escape(r));
        }
        out.push_str("  </identification>\n");
    }
    out.push_str("  <part-list>\n");
    for (i, t) in tracks.iter().enumerate() {
        let id = i + 1;
        let _ = writeln!(out, "    <score-part id=\"P{id}\">");
        let _ = writeln!(out, "      <part-name>{}</part-name>", escape(t.name.as_deref().unwrap_or("")));
        let _ = writeln!(out, "      <score-instrument id=\"P{id}-I1\">\n        <instrument-name>{}</instrument-name>\n      </score-instrument>", escape(t.name.as_deref().unwrap_or("")));
        let channel = if t.is_drum { 10 } else { 1 };
        let _ = writeln!(
            out,
            "      <midi-instrument id=\"P{id}-I1\">\n        <midi-channel>{channel}</midi-channel>\n        <midi-program>{}</midi-program>\n      </midi-instrument>",
            t.program as u32 + 1
        );
        out.push_str("    </score-part>\n");
    }
    out.push_str("  </part-list>\n");

    for (pi, track) in tracks.iter().enumerate() {
        let _ = writeln!(out, "  <part id=\"P{}\">", pi + 1);
        write_part(&mut out, &music, track, pi == 0, &spans);
        out.push_str("  </part>\n");
    }
    out.push_str("</score-partwise>\n");
    Ok(out)
}

fn write_part(out: &mut String, music: &Music, track: &Track, first_part: bool, spans: &[(Tick, Tick)]) {
    // (time, order, item) for the whole part; order keeps attributes and
    // directions ahead of notes at equal ticks.
    let mut items: Vec<(Tick, u8, Item<'_>)> = Vec::new();
    let mut sig_times: Vec<Tick> = music
        .key_signatures
        .iter()
        .map(|k| k.time)
        .chain(music.time_signatures.iter().map(|t| t.time))
        .collect();
    sig_times.sort_unstable();
    sig_times.dedup();
    for t in sig_times {
        items.push((
            t,
            0,
            Item::Attributes {
                key: music.key_signatures.iter().find(|k| k.time == t),
                time: music.time_signatures.iter().find(|s| s.time == t),
            },
        ));
    }
    if first_part {
        for t in &music.tempos {
            items.push((t.time, 1, Item::Tempo(t.qpm)));
        }
    }
    let mut lyric_used = vec![false; track.lyrics.len()];
    for n in &track.notes {
        let lyric = track
            .lyrics
            .iter()
            .enumerate()
            .find(|(i, l)| l.time == n.time && !lyric_used[*i])
            .map(|(i, l)| {
                lyric_used[i] = true;
                l.text.as_str()
            });
        if n.duration == 0 {
            items.push((n.time, 2, Item::Note { pitch: n.pitch, duration: 0, velocity: n.velocity, stop: false, start: false, lyric }));
            continue;
        }
        let mut t = n.time;
        let mut first = true;
        while t < n.end() {
            let (_, span_end) = spans.iter().copied().find(|&(s, e)| s <= t && t < e).expect("spans cover notes");
            let seg_end = span_end.min(n.end());
            items.push((
                t,
                2,
                Item::Note {
                    pitch: n.pitch,
                    duration: seg_end - t,
                    velocity: n.velocity,
                    stop: !first,
                    start: seg_end < n.end(),
                    lyric: if first { lyric } else { None },
                },
            ));
            first = false;
            t = seg_end;
        }
    }
    items.sort_by_key(|(t, order, _)| (*t, *order));

    let mut next = 0;
    for (mi, &(start, end)) in spans.iter().enumerate() {
        let _ = writeln!(out, "    <measure number=\"{}\">", mi + 1);
        let mut cursor = start;
        if mi == 0 {
            let _ = writeln!(out, "      <attributes>\n        <divisions>{}</divisions>", music.resolution);
            if let Some((0, _, Item::Attributes { key, time })) = items.get(next) {
                write_signature(out, *key, *time);
                next += 1;
            }
            out.push_str("      </attributes>\n");
        }
        while let Some((t, _, item)) = items.get(next) {
            if *t >= end {
                break;
            }
            move_cursor(out, &mut cursor, *t);
            match item {
                Item::Attributes { key, time } => {
                    out.push_str("      <attributes>\n");
                    write_signature(out, *key, *time);
                    out.push_str("      </attributes>\n");
                }
                Item::Tempo(qpm) => {
                    let _ = writeln!(
                        out,
                        "      <direction placement=\"above\">\n        <direction-type>\n          <metronome>\n            <beat-unit>quarter</beat-unit>\n            <per-minute>{qpm}</per-minute>\n          </metronome>\n        </direction-type>\n        <sound tempo=\"{qpm}\"/>\n      </direction>"
                    );
                }
                Item::Note { pitch, duration, velocity, stop, start, lyric } => {
                    let (step, alter, octave) = midi_to_pitch(*pitch);
                    let _ = writeln!(out, "      <note dynamics=\"{}\">", velocity_dynamics(*velocity));
                    let _ = write!(out, "        <pitch>\n          <step>{step}</step>\n");
                    if alter != 0 {
                        let _ = writeln!(out, "          <alter>{alter}</alter>");
                    }
                    let _ = writeln!(out, "          <octave>{octave}</octave>\n        </pitch>");
                    let _ = writeln!(out, "        <duration>{duration}</duration>");
                    if *stop {
                        out.push_str("        <tie type=\"stop\"/>\n");
                    }
                    if *start {
                        out.push_str("        <tie type=\"start\"/>\n");
                    }
                    if *stop || *start {
                        out.push_str("        <notations>\n");
                        if *stop {
                            out.push_str("          <tied type=\"stop\"/>\n");
                        }
                        if *start {
                            out.push_str("          <tied type=\"start\"/>\n");
                        }
                        out.push_str("        </notations>\n");
                    }
                    if let Some(text) = lyric {
                        let _ = writeln!(out, "        <lyric>\n          <text>{}</text>\n        </lyric>", escape(text));
                    }
                    out.push_str("      </note>\n");
                    cursor += duration;
                }
            }
            next += 1;
        }
        move_cursor(out, &mut cursor, end);
        out.push_str("    </measure>\n");
    }
}

fn move_cursor(out: &mut String, cursor: &mut Tick, target: Tick) {
    if target > *cursor {
        let _ = writeln!(out, "      <forward>\n        <duration>{}</duration>\n      </forward>", target - *cursor);
    } else if target < *cursor {
        let _ = writeln!(out, "      <backup>\n        <duration>{}</duration>\n      </backup>", *cursor - target);
    }
    *cursor = target;
}

fn write_signature(out: &mut String, key: Option<&KeySignature>, time: Option<&TimeSignature>) {
    if let Some(k) = key {
        let _ = writeln!(
            out,
            "        <key>\n          <fifths>{}</fifths>\n          <mode>{}</mode>\n        </key>",
            theory::root_to_fifths(k.root, k.mode),
            k.mode.as_str()
        );
    }
    if let Some(t) = time {
        let _ = writeln!(
            out,
            "        <time>\n          <beats>{}</beats>\n          <beat-type>{}</beat-type>\n        </time>",
            t.numerator, t.denominator
        );
    }
}
