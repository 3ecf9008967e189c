//! Strategies, round-trip properties and golden checks shared by the
//! round-trip, golden and acceptance targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseError, TestRunner};

use muspy::formats::{self, FileFormat};
use muspy::model::{Chord, KeySignature, Lyric, Metadata, Mode, Music, Note, SourceFormat, Tempo, TimeSignature, Track};
use muspy::representations::{
    decode_event, decode_notes, decode_pitch, encode_event, encode_notes, encode_pitch, EventConfig, OverlapPolicy,
};
use muspy::{midi, serialization};

pub type PropResult = Result<(), TestCaseError>;

pub fn config() -> Config {
    Config {
        cases: 100,
        rng_seed: RngSeed::Fixed(0x6d75_7370),
        failure_persistence: None,
        ..Config::default()
    }
}

/// Notes where no two notes of the same pitch overlap: each (pitch, gap,
/// duration) is placed after the previous note of that pitch ends.
pub fn layered_notes(max: usize) -> impl Strategy<Value = Vec<Note>> {
    prop::collection::vec((0u8..128, 0u64..200, 0u64..150, 1u8..128), 1..max).prop_map(|raw| {
        let mut last_end = [0u64; 128];
        let mut notes: Vec<Note> = raw
            .into_iter()
            .map(|(p, gap, dur, vel)| {
                let t = last_end[p as usize] + gap;
                last_end[p as usize] = t + dur;
                Note::new(t, p, dur, vel)
            })
            .collect();
        notes.sort_by_key(|n| (n.time, n.pitch));
        notes
    })
}

pub fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Major), Just(Mode::Minor)]
}

/// Strictly increasing times starting anywhere.
pub fn times(max: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..5000, 0..max).prop_map(|gaps| {
        let mut t = 0;
        gaps.into_iter()
            .map(|g| {
                let out = t;
                t += g;
                out
            })
            .collect()
    })
}

pub fn name() -> impl Strategy<Value = Option<String>> {
    prop::option::of("[A-Za-z][A-Za-z0-9 ]{0,12}")
}

/// Music that survives SMF: one melodic or drum track per channel, integer
/// microsecond tempos, every track non-empty.
pub fn smf_music() -> impl Strategy<Value = Music> {
    let track = (0u8..128, any::<bool>(), name(), layered_notes(30), prop::collection::vec("[a-z]{1,6}", 0..3));
    (
        1u32..2000,
        name(),
        times(4),
        prop::collection::vec(200_000u32..2_000_000, 4),
        times(3),
        prop::collection::vec((0u8..12, mode()), 3),
        times(3),
        prop::collection::vec((1u32..16, 0usize..7), 3),
        prop::collection::vec(track, 1..5),
    )
        .prop_map(|(resolution, title, tempo_t, tempo_us, key_t, keys, ts_t, sigs, tracks)| {
            let mut m = Music::new(resolution);
            m.metadata = Metadata::new(SourceFormat::Midi);
            m.metadata.title = title;
            m.tempos = tempo_t.iter().zip(&tempo_us).map(|(&time, &us)| Tempo { time, qpm: 60_000_000.0 / us as f64 }).collect();
            m.key_signatures = key_t.iter().zip(&keys).map(|(&time, &(root, mode))| KeySignature { time, root, mode }).collect();
            m.time_signatures = ts_t
                .iter()
                .zip(&sigs)
                .map(|(&time, &(numerator, d))| TimeSignature { time, numerator, denominator: 1 << d })
                .collect();
            for (program, is_drum, name, notes, words) in tracks {
                let mut t = Track::new(program, is_drum).with_notes(notes);
                t.name = name;
                t.lyrics = words.into_iter().enumerate().map(|(i, text)| Lyric { time: i as u64 * 7, text }).collect();
                m.tracks.push(t);
            }
            m.sorted()
        })
}

pub fn any_music() -> impl Strategy<Value = Music> {
    let chord = (0u64..1000, prop::collection::vec(0u8..128, 1..4), 0u64..100, 0u8..128)
        .prop_map(|(time, pitches, duration, velocity)| Chord { time, pitches, duration, velocity });
    let track = (
        0u8..128,
        any::<bool>(),
        prop::option::of("\\PC{0,10}"),
        prop::collection::vec((0u64..10_000, 0u8..128, 0u64..500, 0u8..128), 0..20),
        prop::collection::vec(chord, 0..3),
        prop::collection::vec((0u64..1000, "\\PC{0,8}"), 0..3),
    );
    (
        1u32..100_000,
        prop::option::of("\\PC{0,16}"),
        prop::collection::vec("\\PC{0,8}", 0..3),
        prop::collection::vec((0u64..10_000, 1e-3f64..1e4), 0..4),
        prop::collection::vec((0u64..10_000, 0u8..12, mode()), 0..3),
        prop::collection::vec((0u64..10_000, 1u32..64, 0usize..7), 0..3),
        prop::collection::vec(track, 0..4),
        prop_oneof![Just(SourceFormat::Midi), Just(SourceFormat::Musicxml), Just(SourceFormat::Abc), Just(SourceFormat::Muspy)],
    )
        .prop_map(|(resolution, title, creators, tempos, keys, sigs, tracks, fmt)| {
            let mut m = Music::new(resolution);
            m.metadata = Metadata::new(fmt);
            m.metadata.title = title;
            m.metadata.creators = creators;
            m.tempos = tempos.into_iter().map(|(time, qpm)| Tempo { time, qpm }).collect();
            m.key_signatures = keys.into_iter().map(|(time, root, mode)| KeySignature { time, root, mode }).collect();
            m.time_signatures =
                sigs.into_iter().map(|(time, numerator, d)| TimeSignature { time, numerator, denominator: 1 << d }).collect();
            for (program, is_drum, name, notes, chords, lyrics) in tracks {
                let mut t = Track::new(program, is_drum)
                    .with_notes(notes.into_iter().map(|(a, b, c, d)| Note::new(a, b, c, d)).collect());
                t.name = name;
                t.chords = chords;
                t.lyrics = lyrics.into_iter().map(|(time, text)| Lyric { time, text }).collect();
                m.tracks.push(t);
            }
            m
        })
}

pub fn flat(m: &Music) -> Vec<Note> {
    let mut v: Vec<Note> = m.notes().copied().collect();
    v.sort_by_key(|n| (n.time, n.pitch, n.duration));
    v
}


pub fn midi_round_trip(m: Music) -> PropResult {
    let bytes = midi::write_midi(&m).unwrap();
    let back = midi::read_midi(&bytes).unwrap();
    prop_assert_eq!(back.resolution, m.resolution);
    prop_assert_eq!(&back.metadata.title, &m.metadata.title);
    prop_assert_eq!(&back.key_signatures, &m.key_signatures);
    prop_assert_eq!(&back.time_signatures, &m.time_signatures);
    prop_assert_eq!(back.tempos.len(), m.tempos.len());
    for (a, b) in back.tempos.iter().zip(&m.tempos) {
        prop_assert_eq!(a.time, b.time);
        prop_assert!((a.qpm - b.qpm).abs() < 1e-9 * b.qpm);
    }
    prop_assert_eq!(back.tracks.len(), m.tracks.len());
    for (a, b) in back.tracks.iter().zip(&m.tracks) {
        prop_assert_eq!(a.is_drum, b.is_drum);
        prop_assert_eq!(a.program, b.program);
        prop_assert_eq!(&a.name, &b.name);
        prop_assert_eq!(&a.notes, &b.notes);
        prop_assert_eq!(&a.lyrics, &b.lyrics);
    }
    Ok(())
}

pub fn canonical_json_round_trip(m: Music) -> PropResult {
    let text = serialization::save(&m).unwrap();
    let back = serialization::load(&text).unwrap();
    prop_assert_eq!(&back, &m.clone().sorted());
    // saving again is byte-identical
    prop_assert_eq!(serialization::save(&back).unwrap(), text);
    Ok(())
}

pub fn event_round_trip((notes, resolution): (Vec<Note>, u32)) -> PropResult {
    let mut m = Music::new(resolution);
    m.tracks.push(Track::new(0, false).with_notes(notes));
    for config in [EventConfig::default(), EventConfig::experiment()] {
        let seq = encode_event(&m, &config);
        prop_assert!(seq.tokens.iter().all(|&t| (t as usize) < config.vocab_size()));
        let back = decode_event(&seq).unwrap();
        prop_assert_eq!(back.resolution, resolution);
        let (a, b) = (flat(&back), flat(&m));
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.time, x.pitch, x.duration), (y.time, y.pitch, y.duration));
            if config.use_velocity {
                prop_assert!((x.velocity as i32 - y.velocity as i32).abs() <= 2, "{} vs {}", x.velocity, y.velocity);
            } else {
                prop_assert_eq!(x.velocity, 64);
            }
        }
    }
    Ok(())
}

pub fn event_input() -> impl Strategy<Value = (Vec<Note>, u32)> {
    (layered_notes(60), 1u32..1000)
}

pub fn note_table_round_trip(m: Music) -> PropResult {
    let back = decode_notes(&encode_notes(&m)).unwrap();
    prop_assert_eq!(back.resolution, m.resolution);
    let mut expected: Vec<Note> = m.notes().copied().collect();
    expected.sort_by_key(|n| (n.time, n.pitch));
    prop_assert_eq!(&back.tracks[0].notes, &expected);
    Ok(())
}

/// A single line: each note starts at or after the previous one ends.
pub fn monophonic_notes() -> impl Strategy<Value = Vec<Note>> {
    prop::collection::vec((0u8..128, 0u64..5, 1u64..12), 0..40).prop_map(|raw| {
        let mut t = 0;
        raw.into_iter()
            .map(|(p, gap, dur)| {
                let n = Note::new(t + gap, p, dur, 64);
                t = n.end();
                n
            })
            .collect()
    })
}

pub fn pitch_round_trip(notes: Vec<Note>) -> PropResult {
    let mut m = Music::new(4);
    m.tracks.push(Track::new(0, false).with_notes(notes.clone()));
    let seq = encode_pitch(&m, OverlapPolicy::Error).unwrap();
    prop_assert_eq!(seq.len() as u64, notes.last().map_or(0, Note::end));
    let back = decode_pitch(&seq).unwrap();
    prop_assert_eq!(&back.tracks[0].notes, &notes);
    Ok(())
}

/// Runs one property under the shared configuration; the error names the
/// minimal failing input.
pub fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> PropResult) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    TestRunner::new(config()).run(&strategy, test).map_err(|e| e.to_string())
}

// --- golden fixtures --------------------------------------------------------

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Source fixtures in a directory (everything but the expected documents).
pub fn inputs(dir: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(fixture(dir))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".json"))
        .collect();
    out.sort();
    out
}

/// Parses every fixture in `dir` and compares it byte for byte with its
/// expected document(s). Returns the number of fixtures checked.
pub fn check_goldens(dir: &str) -> Result<usize, String> {
    let files = inputs(dir);
    for path in &files {
        let shown = path.display();
        let songs = formats::read_file(path, None).map_err(|e| format!("{shown}: {e}"))?;
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let goldens: Vec<PathBuf> = if songs.len() == 1 {
            vec![path.with_file_name(format!("{name}.muspy.json"))]
        } else {
            (0..songs.len()).map(|i| path.with_file_name(format!("{name}.{i}.muspy.json"))).collect()
        };
        for (music, golden) in songs.iter().zip(&goldens) {
            let expected =
                std::fs::read_to_string(golden).map_err(|_| format!("missing {}", golden.display()))?;
            let actual = serialization::save(music).map_err(|e| format!("{shown}: {e}"))?;
            if actual != expected {
                return Err(format!("{shown}: output differs from {}", golden.display()));
            }
            if serialization::load(&expected).map_err(|e| e.to_string())? != *music {
                return Err(format!("{}: does not load back to the parsed music", golden.display()));
            }
        }
    }
    Ok(files.len())
}

pub const CORRUPT: [(&str, FileFormat, &str); 3] = [
    ("truncated.mid", FileFormat::Midi, "truncated"),
    ("unclosed.musicxml", FileFormat::Musicxml, "parse"),
    ("stray_symbol.abc", FileFormat::Abc, "parse"),
];

/// Every corrupt fixture must fail with the expected error kind.
pub fn check_corrupt() -> Result<(), String> {
    for (file, fmt, kind) in CORRUPT {
        match formats::read_file(&fixture("corrupt").join(file), Some(fmt)) {
            Ok(_) => return Err(format!("{file} parsed without error")),
            Err(e) if e.kind() != kind => return Err(format!("{file}: expected {kind}, got {} ({e})", e.kind())),
            Err(_) => {}
        }
    }
    Ok(())
}
