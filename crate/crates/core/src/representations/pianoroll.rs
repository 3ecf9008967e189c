use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Music, Note, Tick, Track, DEFAULT_VELOCITY};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RollMode {
    #[default]
    Binary,
    Velocity,
}

/// A `T × 128` time-by-pitch matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PianoRoll {
    pub mode: RollMode,
    pub resolution: u32,
    pub rows: Vec<[u8; 128]>,
}

impl PianoRoll {
    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        let limit = match self.mode {
            RollMode::Binary => 1,
            RollMode::Velocity => 127,
        };
        for (t, row) in self.rows.iter().enumerate() {
            if let Some(p) = row.iter().position(|&c| c > limit) {
                return Err(Error::Domain(format!(
                    "cell ({t}, {p}) = {} exceeds {limit}",
                    row[p]
                )));
            }
        }
        Ok(())
    }

    /// One line per step, 128 comma-separated cells, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 256);
        for row in &self.rows {
            for (p, c) in row.iter().enumerate() {
                if p > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, mode: RollMode, resolution: u32) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut row = [0u8; 128];
            let mut n = 0;
            for (j, cell) in line.split(',').enumerate() {
                let slot = row.get_mut(j).ok_or_else(|| Error::Parse {
                    line: i + 1,
                    column: j + 1,
                    message: "more than 128 columns".into(),
                })?;
                *slot = cell.trim().parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    column: j + 1,
                    message: format!("{cell:?} is not a cell value"),
                })?;
                n += 1;
            }
            if n != 128 {
                return Err(Error::Parse {
                    line: i + 1,
                    column: n + 1,
                    message: format!("expected 128 columns, found {n}"),
                });
            }
            rows.push(row);
        }
        let roll = PianoRoll { mode, resolution, rows };
        roll.validate()?;
        Ok(roll)
    }
}

/// Every note marks `[time, time + max(duration, 1))`; overlapping notes keep
/// the larger cell value.
pub fn encode_pianoroll(music: &Music, mode: RollMode) -> PianoRoll {
    let steps = music.notes().map(|n| n.time + n.duration.max(1)).max().unwrap_or(0);
    let mut rows = vec![[0u8; 128]; steps as usize];
    for n in music.notes() {
        let value = match mode {
            RollMode::Binary => 1,
            RollMode::Velocity => n.velocity,
        };
        for row in &mut rows[n.time as usize..(n.time + n.duration.max(1)) as usize] {
            let cell = &mut row[n.pitch as usize];
            *cell = (*cell).max(value);
        }
    }
    PianoRoll { mode, resolution: music.resolution, rows }
}

/// Each maximal run of nonzero cells in a pitch column becomes one note, so
/// back-to-back re-articulations of a pitch merge.
pub fn decode_pianoroll(roll: &PianoRoll) -> Result<Music> {
    roll.validate()?;
    let mut notes = Vec::new();
    for p in 0..128usize {
        let mut start: Option<(Tick, u8)> = None;
        for (t, row) in roll.rows.iter().enumerate() {
            match (row[p], start) {
                (0, Some((s, v))) => {
                    notes.push(Note::new(s, p as u8, t as Tick - s, v));
                    start = None;
                }
                (c, None) if c > 0 => {
                    let v = match roll.mode {
                        RollMode::Binary => DEFAULT_VELOCITY,
                        RollMode::Velocity => c,
                    };
                    start = Some((t as Tick, v));
                }
                _ => {}
            }
        }
        if let Some((s, v)) = start {
            notes.push(Note::new(s, p as u8, roll.rows.len() as Tick - s, v));
        }
    }
    let mut music = Music::new(roll.resolution);
    music.tracks.push(Track::new(0, false).with_notes(notes));
    music.sort();
    Ok(music)
}
