//! Pitch- and rhythm-related evaluation metrics.
//!
//! Pitch metrics look at non-drum notes only, drum metrics at drum notes
//! only; the rhythm metrics (empty beats, groove) use every note. A note
//! sounds on the ticks `[time, time + max(duration, 1))`.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{Mode, Music, Note, Tick};
use crate::theory::{key_name, scale_mask};

/// A metric result, or the reason it cannot be computed.
#[derive(Clone, Debug, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined(&'static str),
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match *self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::Undefined(_) => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, MetricValue::Defined(_))
    }
}

const NO_SOUNDING_STEP: &str = "no sounding step";
const NO_PITCHED_NOTE: &str = "no non-drum note";
const NO_DRUM_NOTE: &str = "no drum note";
const EMPTY_SPAN: &str = "music has zero length";
const SINGLE_MEASURE: &str = "fewer than two measures";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Meter {
    #[default]
    Duple,
    Triple,
}

/// What makes a beat empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyBeat {
    /// No note starts inside the beat.
    #[default]
    Onset,
    /// No note sounds anywhere inside the beat.
    Sounding,
}

fn pitched(music: &Music) -> impl Iterator<Item = &Note> + '_ {
    music.tracks.iter().filter(|t| !t.is_drum).flat_map(|t| &t.notes)
}

fn drums(music: &Music) -> impl Iterator<Item = &Note> + '_ {
    music.tracks.iter().filter(|t| t.is_drum).flat_map(|t| &t.notes)
}

fn span(n: &Note) -> (Tick, Tick) {
    (n.time, n.time + n.duration.max(1))
}

/// Number of ticks with exactly `k` distinct sounding pitches, for each `k`
/// (index 0 unused). Same-pitch intervals are merged first, then a sweep over
/// the boundaries accumulates segment lengths.
fn sounding_histogram(music: &Music) -> Vec<u64> {
    let mut by_pitch: Vec<Vec<(Tick, Tick)>> = vec![Vec::new(); 128];
    for n in pitched(music) {
        by_pitch[n.pitch as usize].push(span(n));
    }
    let mut edges: Vec<(Tick, i32)> = Vec::new();
    for mut spans in by_pitch.into_iter().filter(|s| !s.is_empty()) {
        spans.sort_unstable();
        let (mut start, mut end) = spans[0];
        for &(s, e) in &spans[1..] {
            if s > end {
                edges.push((start, 1));
                edges.push((end, -1));
                start = s;
            }
            end = end.max(e);
        }
        edges.push((start, 1));
        edges.push((end, -1));
    }
    edges.sort_unstable();
    let mut hist = vec![0u64; 129];
    let mut active = 0i32;
    let mut prev = 0;
    for (t, delta) in edges {
        if active > 0 {
            hist[active as usize] += t - prev;
        }
        active += delta;
        prev = t;
    }
    hist
}

/// Mean number of distinct sounding pitches over sounding ticks.
pub fn polyphony(music: &Music) -> MetricValue {
    let hist = sounding_histogram(music);
    let steps: u64 = hist.iter().sum();
    if steps == 0 {
        return MetricValue::Undefined(NO_SOUNDING_STEP);
    }
    let weighted: u64 = hist.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();
    MetricValue::Defined(weighted as f64 / steps as f64)
}

/// Fraction of sounding ticks with at least `threshold` distinct pitches.
pub fn polyphony_rate(music: &Music, threshold: usize) -> MetricValue {
    let hist = sounding_histogram(music);
    let steps: u64 = hist.iter().sum();
    if steps == 0 {
        return MetricValue::Undefined(NO_SOUNDING_STEP);
    }
    let hits: u64 = hist.iter().skip(threshold.max(1)).sum();
    MetricValue::Defined(hits as f64 / steps as f64)
}

fn pitch_class_counts(music: &Music) -> [u64; 12] {
    let mut counts = [0u64; 12];
    for n in pitched(music) {
        counts[(n.pitch % 12) as usize] += 1;
    }
    counts
}

fn in_scale_rate(counts: &[u64; 12], root: u8, mode: Mode) -> MetricValue {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return MetricValue::Undefined(NO_PITCHED_NOTE);
    }
    let mask = scale_mask(root, mode);
    let hits: u64 = (0..12).filter(|&pc| mask[pc]).map(|pc| counts[pc]).sum();
    MetricValue::Defined(hits as f64 / total as f64)
}

/// Fraction of notes whose pitch class is in the diatonic scale of the key
/// (natural minor for minor keys).
pub fn pitch_in_scale_rate(music: &Music, root: u8, mode: Mode) -> Result<MetricValue> {
    if root > 11 {
        return Err(Error::InvalidArgument(format!("root {root} outside 0..=11")));
    }
    Ok(in_scale_rate(&pitch_class_counts(music), root, mode))
}

/// Best pitch-in-scale rate over all 24 keys.
pub fn scale_consistency(music: &Music) -> MetricValue {
    let counts = pitch_class_counts(music);
    let mut best = MetricValue::Undefined(NO_PITCHED_NOTE);
    for root in 0..12 {
        for mode in [Mode::Major, Mode::Minor] {
            if let MetricValue::Defined(v) = in_scale_rate(&counts, root, mode) {
                if best.value().map_or(true, |b| v > b) {
                    best = MetricValue::Defined(v);
                }
            }
        }
    }
    best
}

fn entropy(counts: &[u64]) -> MetricValue {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return MetricValue::Undefined(NO_PITCHED_NOTE);
    }
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum::<f64>();
    MetricValue::Defined(h.max(0.0))
}

/// Base-2 Shannon entropy of the note histogram over the 128 pitches.
pub fn pitch_entropy(music: &Music) -> MetricValue {
    let mut counts = [0u64; 128];
    for n in pitched(music) {
        counts[n.pitch as usize] += 1;
    }
    entropy(&counts)
}

/// Base-2 Shannon entropy of the note histogram over the 12 pitch classes.
pub fn pitch_class_entropy(music: &Music) -> MetricValue {
    entropy(&pitch_class_counts(music))
}

/// Fraction of beats `[k·r, (k+1)·r)` up to `ceil(end_time / r)` that are
/// empty under the given reading.
pub fn empty_beat_rate(music: &Music, rule: EmptyBeat) -> MetricValue {
    let end = music.end_time();
    let r = music.resolution as Tick;
    if end == 0 || r == 0 {
        return MetricValue::Undefined(EMPTY_SPAN);
    }
    let beats = end.div_ceil(r);
    let mut filled = vec![false; beats as usize];
    for n in music.notes() {
        match rule {
            EmptyBeat::Onset => {
                if let Some(b) = filled.get_mut((n.time / r) as usize) {
                    *b = true;
                }
            }
            EmptyBeat::Sounding => {
                let (s, e) = span(n);
                for b in (s / r)..((e - 1) / r + 1).min(beats) {
                    filled[b as usize] = true;
                }
            }
        }
    }
    let empty = filled.iter().filter(|&&f| !f).count();
    MetricValue::Defined(empty as f64 / beats as f64)
}

/// Fraction of drum onsets on the half-beat (duple) or third-beat (triple)
/// grid. The resolution must be divisible by 6.
pub fn drum_in_pattern_rate(music: &Music, meter: Meter) -> Result<MetricValue> {
    let r = music.resolution as Tick;
    if r == 0 || r % 6 != 0 {
        return Err(Error::InvalidArgument(format!(
            "resolution {r} is not divisible by 6"
        )));
    }
    let grid = match meter {
        Meter::Duple => r / 2,
        Meter::Triple => r / 3,
    };
    let (mut total, mut hits) = (0u64, 0u64);
    for n in drums(music) {
        total += 1;
        hits += (n.time % grid == 0) as u64;
    }
    Ok(if total == 0 {
        MetricValue::Undefined(NO_DRUM_NOTE)
    } else {
        MetricValue::Defined(hits as f64 / total as f64)
    })
}

/// Best drum-in-pattern rate over duple and triple grids.
pub fn drum_pattern_consistency(music: &Music) -> Result<MetricValue> {
    let duple = drum_in_pattern_rate(music, Meter::Duple)?;
    let triple = drum_in_pattern_rate(music, Meter::Triple)?;
    Ok(match (duple.value(), triple.value()) {
        (Some(a), Some(b)) => MetricValue::Defined(a.max(b)),
        _ => duple,
    })
}

/// One minus the mean normalised Hamming distance between the onset
/// vectors of consecutive measures; the last partial measure is zero-padded.
pub fn groove_consistency(music: &Music, measure_len: Tick) -> Result<MetricValue> {
    if measure_len == 0 {
        return Err(Error::InvalidArgument("measure length must be positive".into()));
    }
    let measures = music.end_time().div_ceil(measure_len);
    if measures < 2 {
        return Ok(MetricValue::Undefined(SINGLE_MEASURE));
    }
    let mut onsets: Vec<Vec<Tick>> = vec![Vec::new(); measures as usize];
    for n in music.notes() {
        if let Some(m) = onsets.get_mut((n.time / measure_len) as usize) {
            m.push(n.time % measure_len);
        }
    }
    for m in &mut onsets {
        m.sort_unstable();
        m.dedup();
    }
    let distance: f64 = onsets
        .windows(2)
        .map(|w| symmetric_difference(&w[0], &w[1]) as f64 / measure_len as f64)
        .sum();
    Ok(MetricValue::Defined(1.0 - distance / (measures - 1) as f64))
}

fn symmetric_difference(a: &[Tick], b: &[Tick]) -> usize {
    let (mut i, mut j, mut shared) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() + b.len() - 2 * shared
}

/// Measure length from the first time signature, or 4/4.
pub fn default_measure_len(music: &Music) -> Tick {
    music
        .time_signatures
        .first()
        .and_then(|ts| ts.measure_ticks(music.resolution))
        .unwrap_or(4 * music.resolution as Tick)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub polyphony_threshold: usize,
    /// Key for the pitch-in-scale rate; the first key signature otherwise.
    pub key: Option<(u8, Mode)>,
    pub empty_beat: EmptyBeat,
    /// Groove measure length in ticks; derived from the first time
    /// signature otherwise.
    pub measure_len: Option<Tick>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            polyphony_threshold: 2,
            key: None,
            empty_beat: EmptyBeat::Onset,
            measure_len: None,
        }
    }
}

/// Flat name → value map. Undefined metrics are `null` with a
/// `<name>_undefined_reason` entry; `param_*` and `def_*` entries record the
/// parameters and definitions used.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct MetricReport(pub BTreeMap<String, Value>);

impl MetricReport {
    fn put(&mut self, name: &str, v: MetricValue) {
        match v {
            MetricValue::Defined(x) => {
                self.0.insert(name.into(), json!(x));
            }
            MetricValue::Undefined(reason) => {
                self.0.insert(name.into(), Value::Null);
                self.0.insert(format!("{name}_undefined_reason"), json!(reason));
            }
        }
    }

    fn put_result(&mut self, name: &str, v: Result<MetricValue>) {
        match v {
            Ok(v) => self.put(name, v),
            Err(e) => {
                self.0.insert(name.into(), Value::Null);
                self.0.insert(format!("{name}_undefined_reason"), json!(e.to_string()));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).and_then(Value::as_f64)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.0).expect("report is plain JSON");
        s.push('\n');
        s
    }
}

pub const METRIC_NAMES: [&str; 11] = [
    "polyphony",
    "polyphony_rate",
    "pitch_in_scale_rate",
    "scale_consistency",
    "pitch_entropy",
    "pitch_class_entropy",
    "empty_beat_rate",
    "drum_in_pattern_rate_duple",
    "drum_in_pattern_rate_triple",
    "drum_pattern_consistency",
    "groove_consistency",
];

pub fn evaluate(music: &Music, config: &MetricConfig) -> MetricReport {
    let mut r = MetricReport::default();
    r.put("polyphony", polyphony(music));
    r.put("polyphony_rate", polyphony_rate(music, config.polyphony_threshold));

    let key = config
        .key
        .or_else(|| music.key_signatures.first().map(|k| (k.root, k.mode)));
    match key {
        Some((root, mode)) => {
            r.put_result("pitch_in_scale_rate", pitch_in_scale_rate(music, root, mode));
            r.0.insert("param_key".into(), json!(key_name(root, mode)));
        }
        None => r.put("pitch_in_scale_rate", MetricValue::Undefined("no key given")),
    }
    r.put("scale_consistency", scale_consistency(music));
    r.put("pitch_entropy", pitch_entropy(music));
    r.put("pitch_class_entropy", pitch_class_entropy(music));
    r.put("empty_beat_rate", empty_beat_rate(music, config.empty_beat));
    r.put_result("drum_in_pattern_rate_duple", drum_in_pattern_rate(music, Meter::Duple));
    r.put_result("drum_in_pattern_rate_triple", drum_in_pattern_rate(music, Meter::Triple));
    r.put_result("drum_pattern_consistency", drum_pattern_consistency(music));
    let measure_len = config.measure_len.unwrap_or_else(|| default_measure_len(music));
    r.put_result("groove_consistency", groove_consistency(music, measure_len));

    r.0.insert("param_polyphony_threshold".into(), json!(config.polyphony_threshold));
    r.0.insert("param_empty_beat".into(), json!(config.empty_beat));
    r.0.insert("param_measure_len".into(), json!(measure_len));
    r.0.insert("param_resolution".into(), json!(music.resolution));
    r.0.insert("def_entropy_base".into(), json!(2));
    r.0.insert("def_minor_scale".into(), json!("natural"));
    r.0.insert("def_duple_grid".into(), json!("resolution/2"));
    r.0.insert("def_triple_grid".into(), json!("resolution/3"));
    r.0.insert("def_groove_vector".into(), json!("per-tick onset indicator, final measure zero-padded"));
    r
}
