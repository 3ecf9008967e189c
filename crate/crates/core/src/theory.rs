//! Small pitch and key helpers shared by the readers, writers and metrics.

use crate::model::Mode;

pub const PITCH_CLASS_NAMES: [&str; 12] = [
    "C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B",
];

const MAJOR_STEPS: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_STEPS: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

/// Twelve-entry membership mask of the diatonic scale (natural minor for `Minor`).
pub fn scale_mask(root: u8, mode: Mode) -> [bool; 12] {
    let steps = match mode {
        Mode::Major => &MAJOR_STEPS,
        Mode::Minor => &MINOR_STEPS,
    };
    let mut mask = [false; 12];
    for s in steps {
        mask[((root % 12) + s) as usize % 12] = true;
    }
    mask
}

/// Tonic pitch class for a number of sharps (positive) or flats (negative).
pub fn fifths_to_root(fifths: i32, mode: Mode) -> u8 {
    let major = (fifths * 7).rem_euclid(12);
    match mode {
        Mode::Major => major as u8,
        Mode::Minor => ((major + 9) % 12) as u8,
    }
}

/// Sharps/flats count for a key, chosen in [-6, 5].
pub fn root_to_fifths(root: u8, mode: Mode) -> i32 {
    let major_root = match mode {
        Mode::Major => root as i32,
        Mode::Minor => (root as i32 + 3) % 12,
    };
    // 7 is its own inverse mod 12.
    let f = (major_root * 7).rem_euclid(12);
    if f > 5 {
        f - 12
    } else {
        f
    }
}

/// `"<root name> <mode>"`, e.g. `"Eb major"`.
pub fn key_name(root: u8, mode: Mode) -> String {
    format!("{} {}", PITCH_CLASS_NAMES[(root % 12) as usize], mode.as_str())
}

/// Semitone offset of a note letter within its octave (C = 0).
pub fn step_semitone(step: char) -> Option<i32> {
    Some(match step.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    })
}

/// Accidentals implied by a key signature, indexed by letter C..B (0..7),
/// as semitone alterations.
pub fn key_accidentals(fifths: i32) -> [i32; 7] {
    // letter indices: C0 D1 E2 F3 G4 A5 B6
    const SHARP_ORDER: [usize; 7] = [3, 0, 4, 1, 5, 2, 6];
    const FLAT_ORDER: [usize; 7] = [6, 2, 5, 1, 4, 0, 3];
    let mut acc = [0; 7];
    if fifths > 0 {
        for &l in SHARP_ORDER.iter().take(fifths.min(7) as usize) {
            acc[l] = 1;
        }
    } else {
        for &l in FLAT_ORDER.iter().take((-fifths).min(7) as usize) {
            acc[l] = -1;
        }
    }
    acc
}

pub fn letter_index(step: char) -> Option<usize> {
    "CDEFGAB".find(step.to_ascii_uppercase())
}
