use crate::error::{Error, Result};
use crate::model::{Music, Note, Track};

/// `N × 4` rows of `(time, pitch, duration, velocity)`. Rows are kept wide so
/// out-of-range values can be represented and rejected on decode.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NoteTable {
    pub resolution: u32,
    pub rows: Vec<[u64; 4]>,
}

impl NoteTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,pitch,duration,velocity\n");
        for [t, p, d, v] in &self.rows {
            out.push_str(&format!("{t},{p},{d},{v}\n"));
        }
        out
    }
}

/// All notes of all tracks, ordered by (time, pitch).
pub fn encode_notes(music: &Music) -> NoteTable {
    let mut rows: Vec<[u64; 4]> = music
        .notes()
        .map(|n| [n.time, n.pitch as u64, n.duration, n.velocity as u64])
        .collect();
    rows.sort_by_key(|r| (r[0], r[1]));
    NoteTable { resolution: music.resolution, rows }
}

pub fn decode_notes(table: &NoteTable) -> Result<Music> {
    let notes = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, &[t, p, d, v])| {
            let byte = |x: u64, what: &str| {
                u8::try_from(x)
                    .ok()
                    .filter(|&b| b <= 127)
                    .ok_or_else(|| Error::Domain(format!("row {i}: {what} {x} outside 0..=127")))
            };
            Ok(Note::new(t, byte(p, "pitch")?, d, byte(v, "velocity")?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut music = Music::new(table.resolution);
    music.tracks.push(Track::new(0, false).with_notes(notes));
    music.sort();
    Ok(music)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = Music::new(24);
        m.tracks.push(Track::new(0, false).with_notes(vec![
            Note::new(0, 60, 24, 80),
            Note::new(0, 64, 0, 1),
            Note::new(30, 127, 5, 127),
        ]));
        let t = encode_notes(&m);
        assert_eq!(t.rows[1], [0, 64, 0, 1]);
        assert_eq!(decode_notes(&t).unwrap().tracks[0].notes, m.tracks[0].notes);
    }

    #[test]
    fn empty_and_out_of_range() {
        let t = encode_notes(&Music::new(4));
        assert!(t.rows.is_empty());
        assert!(decode_notes(&t).unwrap().tracks[0].notes.is_empty());
        let bad = NoteTable { resolution: 4, rows: vec![[0, 128, 1, 64]] };
        assert!(matches!(decode_notes(&bad), Err(Error::Domain(_))));
    }
}
