//! Corpus statistics: song lengths, initial tempos and initial keys.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::Music;
use crate::theory::key_name;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SongStats {
    pub name: String,
    pub length_ticks: u64,
    pub length_quarters: f64,
    pub length_seconds: f64,
    /// qpm of the first tempo event.
    pub initial_tempo: Option<f64>,
    /// First key signature, e.g. "Eb major".
    pub initial_key: Option<String>,
}

pub fn song_stats(name: &str, music: &Music) -> SongStats {
    let end = music.end_time();
    SongStats {
        name: name.to_string(),
        length_ticks: end,
        length_quarters: if music.resolution == 0 { 0.0 } else { end as f64 / music.resolution as f64 },
        length_seconds: music.duration_seconds(),
        initial_tempo: music.tempos.first().map(|t| t.qpm),
        initial_key: music.key_signatures.first().map(|k| key_name(k.root, k.mode)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum LengthUnit {
    Ticks,
    Quarters,
    Seconds,
}

impl LengthUnit {
    pub fn of(self, s: &SongStats) -> f64 {
        match self {
            LengthUnit::Ticks => s.length_ticks as f64,
            LengthUnit::Quarters => s.length_quarters,
            LengthUnit::Seconds => s.length_seconds,
        }
    }
}

/// Bins `[edges[i], edges[i + 1])` of equal width.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins aligned to multiples of `width`, covering every value.
    pub fn uniform(values: &[f64], width: f64) -> Histogram {
        assert!(width > 0.0, "bin width must be positive");
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let (Some(lo), Some(hi)) = (
            finite.iter().copied().reduce(f64::min),
            finite.iter().copied().reduce(f64::max),
        ) else {
            return Histogram { edges: Vec::new(), counts: Vec::new() };
        };
        let first = (lo / width).floor() as i64;
        let bins = ((hi / width).floor() as i64 - first + 1) as usize;
        let mut counts = vec![0; bins];
        for v in finite {
            counts[((v / width).floor() as i64 - first) as usize] += 1;
        }
        let edges = (0..=bins).map(|i| (first + i as i64) as f64 * width).collect();
        Histogram { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{c}\n", self.edges[i], self.edges[i + 1]));
        }
        out
    }
}

pub fn length_histogram(songs: &[SongStats], unit: LengthUnit, width: f64) -> Histogram {
    let values: Vec<f64> = songs.iter().map(|s| unit.of(s)).collect();
    Histogram::uniform(&values, width)
}

/// Histogram over songs that have a tempo, plus the count of those that
/// have none.
pub fn tempo_histogram(songs: &[SongStats], width: f64) -> (Histogram, usize) {
    let values: Vec<f64> = songs.iter().filter_map(|s| s.initial_tempo).collect();
    (Histogram::uniform(&values, width), songs.len() - values.len())
}

/// Key counts sorted by descending count (ties by name), plus the number of
/// songs without a key signature.
pub fn key_counts(songs: &[SongStats]) -> (Vec<(String, usize)>, usize) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut none = 0;
    for s in songs {
        match &s.initial_key {
            Some(k) => *counts.entry(k).or_default() += 1,
            None => none += 1,
        }
    }
    let mut sorted: Vec<(String, usize)> = counts.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    (sorted, none)
}

pub fn records_csv(songs: &[SongStats]) -> String {
    let mut out = String::from("name,length_ticks,length_quarters,length_seconds,initial_tempo,initial_key\n");
    for s in songs {
        let name = if s.name.contains([',', '"']) {
            format!("\"{}\"", s.name.replace('"', "\"\""))
        } else {
            s.name.clone()
        };
        out.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            s.length_ticks,
            s.length_quarters,
            s.length_seconds,
            s.initial_tempo.map(|t| t.to_string()).unwrap_or_default(),
            s.initial_key.as_deref().unwrap_or(""),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KeySignature, Mode, Note, Tempo, Track};

    fn song(qpm: Option<f64>, key: Option<(u8, Mode)>) -> SongStats {
        let mut m = Music::new(24);
        m.tracks.push(Track::new(0, false).with_notes(vec![Note::new(0, 60, 96, 64)]));
        if let Some(qpm) = qpm {
            m.tempos.push(Tempo { time: 0, qpm });
        }
        if let Some((root, mode)) = key {
            m.key_signatures.push(KeySignature { time: 0, root, mode });
        }
        song_stats("s", &m)
    }

    #[test]
    fn lengths() {
        let s = song(Some(60.0), None);
        assert_eq!(s.length_ticks, 96);
        assert_eq!(s.length_quarters, 4.0);
        assert_eq!(s.length_seconds, 4.0);
    }

    #[test]
    fn single_tempo_single_bin() {
        let (h, none) = tempo_histogram(&[song(Some(100.0), None)], 10.0);
        assert_eq!(h.counts, [1]);
        assert_eq!(h.edges, [100.0, 110.0]);
        assert_eq!(none, 0);
        let (h, none) = tempo_histogram(&[song(None, None), song(Some(95.0), None), song(Some(121.0), None)], 10.0);
        assert_eq!((h.total(), none), (2, 1));
        assert_eq!(h.counts.len(), 4);
    }

    #[test]
    fn keys_sorted_by_count() {
        let songs = [
            song(None, Some((9, Mode::Minor))),
            song(None, Some((0, Mode::Major))),
            song(None, Some((0, Mode::Major))),
            song(None, None),
        ];
        let (keys, none) = key_counts(&songs);
        assert_eq!(keys, [("C major".to_string(), 2), ("A minor".to_string(), 1)]);
        assert_eq!(none, 1);
    }

    #[test]
    fn empty_histogram() {
        assert!(Histogram::uniform(&[], 1.0).counts.is_empty());
    }
}
