//! Manifest-driven dataset management: download, conversion to canonical
//! documents, iteration, splitting and stratified sampling.
//!
//! A corpus lives under one root directory:
//!
//! ```text
//! <root>/downloads/            fetched archives (+ `.extracted` stamps)
//! <root>/raw/                  extracted source files
//! <root>/converted/            canonical `.muspy.json` documents
//! <root>/converted/.converted.json   conversion marker with per-file hashes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::{self, FileFormat};
use crate::model::Music;
use crate::serialization;

const MARKER: &str = ".converted.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchiveKind {
    #[serde(rename = "zip")]
    Zip,
    #[serde(rename = "tar.gz")]
    TarGz,
    #[serde(rename = "none")]
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub url: String,
    /// Expected hex digest; unchecked when absent.
    #[serde(default)]
    pub sha256: Option<String>,
    pub archive: ArchiveKind,
    /// Local file name; the last URL segment otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filename: Option<String>,
}

impl Source {
    pub fn local_name(&self) -> String {
        self.filename.clone().unwrap_or_else(|| {
            let tail = self.url.trim_end_matches('/').rsplit('/').next().unwrap_or("download");
            let tail = tail.split(['?', '#']).next().unwrap_or(tail).replace("%20", " ");
            if tail.is_empty() { "download".into() } else { tail }
        })
    }
}

/// Source format of a corpus; `auto` picks a reader per file extension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Midi,
    Musicxml,
    Mxl,
    Abc,
    Muspy,
    Auto,
}

impl CorpusFormat {
    pub fn fixed(self) -> Option<FileFormat> {
        match self {
            CorpusFormat::Midi => Some(FileFormat::Midi),
            CorpusFormat::Musicxml => Some(FileFormat::Musicxml),
            CorpusFormat::Mxl => Some(FileFormat::Mxl),
            CorpusFormat::Abc => Some(FileFormat::Abc),
            CorpusFormat::Muspy => Some(FileFormat::Muspy),
            CorpusFormat::Auto => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    /// Keep repeated sections once. The readers never expand repeats, so this
    /// holds for every corpus; the flag documents intent.
    pub discard_repeats: bool,
    /// Keep only the first non-drum track.
    pub melody_only: bool,
}

impl Preprocessing {
    pub fn apply(&self, mut music: Music) -> Music {
        if self.melody_only {
            if let Some(i) = music.tracks.iter().position(|t| !t.is_drum) {
                let melody = music.tracks.swap_remove(i);
                music.tracks = vec![melody];
            } else {
                music.tracks.clear();
            }
        }
        music
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    #[serde(default)]
    pub title: String,
    pub sources: Vec<Source>,
    /// Glob over paths relative to `raw/`; alternatives separated by `;`.
    pub file_glob: String,
    pub source_format: CorpusFormat,
    pub license_note: String,
    /// Whether the URLs and checksums have been confirmed to work.
    #[serde(default)]
    pub verified: bool,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    /// Partial-support notes (melody, chords, multitrack).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partial_support: Vec<String>,
    /// Published song count, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_songs: Option<u64>,
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../manifests/", $name, ".json")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "lmd", "maestro", "wikifonia", "essen", "nes", "hymnal-tune", "hymnal",
    "music21", "nmd", "music21-jsbach", "jsb",
);

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Manifest = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Schema(format!("manifest at `{}`: {}", e.path(), e.inner())))?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    fn check(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("manifest name is empty".into()));
        }
        if self.sources.is_empty() {
            return Err(Error::Config(format!("manifest {} has no sources", self.name)));
        }
        self.patterns().map(|_| ())
    }

    fn patterns(&self) -> Result<Vec<glob::Pattern>> {
        self.file_glob
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                glob::Pattern::new(p)
                    .map_err(|e| Error::Config(format!("bad file_glob {p:?}: {e}")))
            })
            .collect()
    }

    /// The manifests shipped with the crate, one per supported corpus.
    pub fn builtin() -> Vec<Manifest> {
        BUILTIN
            .iter()
            .map(|(name, text)| {
                Manifest::from_json(text).unwrap_or_else(|e| panic!("built-in manifest {name}: {e}"))
            })
            .collect()
    }

    pub fn builtin_named(name: &str) -> Option<Manifest> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Manifest::from_json(text).expect("built-in manifests parse"))
    }

    /// A built-in name or a path to a manifest file.
    pub fn resolve(spec: &str) -> Result<Manifest> {
        match Self::builtin_named(spec) {
            Some(m) => Ok(m),
            None => Self::load(Path::new(spec)),
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DownloadReport {
    pub bytes_transferred: u64,
    pub fetched: Vec<String>,
    pub reused: Vec<String>,
    pub extracted: Vec<String>,
    /// Sources without a checksum in the manifest.
    pub unverified: Vec<String>,
}

/// Fetches every source into `downloads/`, verifies it and extracts it into
/// `raw/`. Files already present with a matching checksum (or, without a
/// checksum, present at all) are not fetched again, and archives already
/// extracted are not extracted again.
pub fn download(manifest: &Manifest, root: &Path) -> Result<DownloadReport> {
    let downloads = root.join("downloads");
    let raw = root.join("raw");
    for dir in [&downloads, &raw] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut report = DownloadReport::default();
    for source in &manifest.sources {
        let name = source.local_name();
        let dest = downloads.join(&name);
        let stamp = downloads.join(format!("{name}.extracted"));
        let present = dest.is_file()
            && match &source.sha256 {
                Some(expected) => sha256_file(&dest)?.eq_ignore_ascii_case(expected),
                None => true,
            };
        if present {
            log::info!("{name}: already downloaded");
            report.reused.push(name.clone());
        } else {
            let _ = fs::remove_file(&stamp);
            let part = downloads.join(format!("{name}.part"));
            let bytes = fetch(&source.url, &part)?;
            if let Some(expected) = &source.sha256 {
                let actual = sha256_file(&part)?;
                if !actual.eq_ignore_ascii_case(expected) {
                    let _ = fs::remove_file(&part);
                    return Err(Error::Integrity {
                        path: dest,
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
            fs::rename(&part, &dest).map_err(|e| Error::io(&dest, e))?;
            log::info!("{name}: fetched {bytes} bytes");
            report.bytes_transferred += bytes;
            report.fetched.push(name.clone());
        }
        if source.sha256.is_none() {
            report.unverified.push(name.clone());
        }
        if !stamp.exists() {
            extract(&dest, source.archive, &raw, &name)?;
            fs::write(&stamp, b"").map_err(|e| Error::io(&stamp, e))?;
            report.extracted.push(name);
        }
    }
    Ok(report)
}

/// Streams a URL into `dest`; `file://` URLs are copied from disk.
fn fetch(url: &str, dest: &Path) -> Result<u64> {
    let transfer = |message: String| Error::Transfer { url: url.to_string(), message };
    let mut reader: Box<dyn Read> = if let Some(path) = url.strip_prefix("file://") {
        Box::new(fs::File::open(path).map_err(|e| transfer(e.to_string()))?)
    } else {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(30))
            .timeout_read(Duration::from_secs(300))
            .build();
        let response = agent.get(url).call().map_err(|e| transfer(e.to_string()))?;
        Box::new(response.into_reader())
    };
    let mut file = fs::File::create(dest).map_err(|e| Error::io(dest, e))?;
    let n = io::copy(&mut reader, &mut file).map_err(|e| transfer(e.to_string()))?;
    file.flush().map_err(|e| Error::io(dest, e))?;
    Ok(n)
}

fn extract(archive: &Path, kind: ArchiveKind, raw: &Path, name: &str) -> Result<()> {
    let open = || fs::File::open(archive).map_err(|e| Error::io(archive, e));
    match kind {
        ArchiveKind::Zip => zip::ZipArchive::new(open()?)
            .and_then(|mut z| z.extract(raw))
            .map_err(|e| Error::Archive(format!("{name}: {e}"))),
        ArchiveKind::TarGz => tar::Archive::new(flate2::read::GzDecoder::new(open()?))
            .unpack(raw)
            .map_err(|e| Error::Archive(format!("{name}: {e}"))),
        ArchiveKind::None => {
            let target = raw.join(name);
            fs::copy(archive, &target).map(|_| ()).map_err(|e| Error::io(&target, e))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IterationMode {
    /// Parse source files as they are visited.
    OnTheFly,
    /// Read canonical documents written by [`convert`].
    Preconverted,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkerEntry {
    sha256: String,
    #[serde(default)]
    outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Marker {
    manifest: String,
    files: BTreeMap<String, MarkerEntry>,
}

#[derive(Clone, Debug)]
pub struct CorpusHandle {
    root: PathBuf,
    mode: IterationMode,
    manifest: Manifest,
}

impl CorpusHandle {
    /// Preconverted mode requires a finished conversion.
    pub fn open(root: impl Into<PathBuf>, manifest: Manifest, mode: IterationMode) -> Result<Self> {
        let handle = CorpusHandle { root: root.into(), mode, manifest };
        if mode == IterationMode::Preconverted && !handle.marker_path().is_file() {
            return Err(Error::Config(format!(
                "{} has not been converted (no {})",
                handle.root.display(),
                handle.marker_path().display()
            )));
        }
        Ok(handle)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn mode(&self) -> IterationMode {
        self.mode
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.root.join("raw")
    }

    pub fn converted_dir(&self) -> PathBuf {
        self.root.join("converted")
    }

    pub fn marker_path(&self) -> PathBuf {
        self.converted_dir().join(MARKER)
    }

    fn read_marker(&self) -> Result<Option<Marker>> {
        let path = self.marker_path();
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    /// Source files matched by the manifest glob, relative to `raw/`, in
    /// lexicographic order.
    pub fn scan_raw(&self) -> Result<Vec<String>> {
        let raw = self.raw_dir();
        if !raw.is_dir() {
            return Ok(Vec::new());
        }
        let patterns = self.manifest.patterns()?;
        let options = glob::MatchOptions {
            case_sensitive: false,
            require_literal_separator: false,
            require_literal_leading_dot: false,
        };
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(&raw).follow_links(true) {
            let entry = entry.map_err(|e| Error::Io {
                path: e.path().map(Path::to_path_buf).unwrap_or_else(|| raw.clone()),
                source: e.into_io_error().unwrap_or_else(|| io::Error::other("walk failed")),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&raw).expect("walk stays under raw");
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if patterns.iter().any(|p| p.matches_with(&rel, options)) {
                files.push(rel);
            }
        }
        files.sort();
        Ok(files)
    }

    /// The corpus file list; identical in both modes for a converted corpus.
    pub fn files(&self) -> Result<Vec<String>> {
        match self.mode {
            IterationMode::OnTheFly => self.scan_raw(),
            IterationMode::Preconverted => Ok(self
                .read_marker()?
                .map(|m| m.files.into_keys().collect())
                .unwrap_or_default()),
        }
    }

    fn format_of(&self, rel: &str) -> Result<FileFormat> {
        self.manifest
            .source_format
            .fixed()
            .or_else(|| FileFormat::from_path(Path::new(rel)))
            .ok_or_else(|| Error::Format(format!("{rel}: unknown file type")))
    }

    fn parse_raw(&self, rel: &str) -> Result<Vec<Music>> {
        let path = self.raw_dir().join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        formats::read_bytes(&bytes, self.format_of(rel)?)
    }

    /// Every Music stored in one corpus file, preprocessed.
    pub fn load(&self, rel: &str) -> Result<Vec<Music>> {
        let music = match self.mode {
            IterationMode::OnTheFly => self.parse_raw(rel)?,
            IterationMode::Preconverted => {
                let marker = self.read_marker()?.unwrap_or_default();
                let entry = marker
                    .files
                    .get(rel)
                    .ok_or_else(|| Error::Config(format!("{rel} is not part of the conversion")))?;
                if let Some(err) = &entry.error {
                    return Err(Error::Format(format!("{rel}: skipped during conversion: {err}")));
                }
                entry
                    .outputs
                    .iter()
                    .map(|out| {
                        let path = self.converted_dir().join(out);
                        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                        serialization::load(&text)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(music.into_iter().map(|m| self.manifest.preprocessing.apply(m)).collect())
    }

    /// Music values in file order; a file that fails to load yields one error
    /// item and iteration continues.
    pub fn iter(&self) -> Result<impl Iterator<Item = Result<Music>> + '_> {
        let files = self.files()?;
        Ok(files.into_iter().flat_map(move |rel| match self.load(&rel) {
            Ok(music) => music.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => {
                log::warn!("{}: {rel}: {e}", self.name());
                vec![Err(e)]
            }
        }))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SkippedFile {
    pub path: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConvertReport {
    pub converted: usize,
    pub unchanged: usize,
    pub documents: usize,
    pub skipped: Vec<SkippedFile>,
}

fn output_names(rel: &str, count: usize) -> Vec<String> {
    if count == 1 {
        vec![format!("{rel}{}", serialization::EXTENSION)]
    } else {
        (0..count).map(|i| format!("{rel}.{i}{}", serialization::EXTENSION)).collect()
    }
}

/// Parses every matched source file and writes canonical documents under
/// `converted/`. Files whose hash matches the previous marker are left
/// alone. Unparseable files are recorded and skipped.
pub fn convert(handle: &CorpusHandle) -> Result<ConvertReport> {
    let files = handle.scan_raw()?;
    let previous = handle.read_marker()?.unwrap_or_default();
    let out_dir = handle.converted_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    enum Outcome {
        Unchanged(MarkerEntry),
        Converted(MarkerEntry),
        Skipped(MarkerEntry),
    }
    let outcomes: Vec<(String, Outcome)> = files
        .par_iter()
        .map(|rel| -> Result<(String, Outcome)> {
            let src = handle.raw_dir().join(rel);
            let bytes = fs::read(&src).map_err(|e| Error::io(&src, e))?;
            let sha256 = sha256_bytes(&bytes);
            if let Some(prev) = previous.files.get(rel) {
                let intact = prev.outputs.iter().all(|o| out_dir.join(o).is_file());
                if prev.sha256 == sha256 && intact {
                    let outcome = if prev.error.is_some() {
                        Outcome::Skipped(prev.clone())
                    } else {
                        Outcome::Unchanged(prev.clone())
                    };
                    return Ok((rel.clone(), outcome));
                }
            }
            let parsed = handle
                .format_of(rel)
                .and_then(|f| formats::read_bytes(&bytes, f))
                .and_then(|music| {
                    let names = output_names(rel, music.len());
                    for (m, name) in music.iter().zip(&names) {
                        let path = out_dir.join(name);
                        if let Some(parent) = path.parent() {
                            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                        }
                        fs::write(&path, serialization::save(m)?).map_err(|e| Error::io(&path, e))?;
                    }
                    Ok(names)
                });
            Ok((
                rel.clone(),
                match parsed {
                    Ok(outputs) => Outcome::Converted(MarkerEntry { sha256, outputs, error: None }),
                    Err(e) => Outcome::Skipped(MarkerEntry {
                        sha256,
                        outputs: Vec::new(),
                        error: Some(e.to_string()),
                    }),
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut report = ConvertReport::default();
    let mut marker = Marker { manifest: handle.name().to_string(), files: BTreeMap::new() };
    for (rel, outcome) in outcomes {
        let entry = match outcome {
            Outcome::Unchanged(e) => {
                report.unchanged += 1;
                e
            }
            Outcome::Converted(e) => {
                report.converted += 1;
                e
            }
            Outcome::Skipped(e) => {
                log::warn!("{}: skipped {rel}: {}", handle.name(), e.error.as_deref().unwrap_or(""));
                report.skipped.push(SkippedFile { path: rel.clone(), error: e.error.clone().unwrap_or_default() });
                e
            }
        };
        report.documents += entry.outputs.len();
        marker.files.insert(rel, entry);
    }
    if report.converted + report.unchanged == 0 {
        return Err(Error::EmptyCorpus(handle.name().to_string()));
    }
    let path = handle.marker_path();
    let mut text = serde_json::to_string_pretty(&marker).expect("marker serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Valid => &self.valid,
            SplitPart::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.valid.len(), self.test.len()]
    }
}

/// Apportions `n` items by `ratios`: floors of the exact quotas, then the
/// leftovers go to the largest fractional parts (earlier parts win ties).
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() || ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::InvalidArgument(format!("ratios must be positive: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Seeded shuffle of the (sorted) file list, then contiguous parts.
pub fn split_files(files: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if files.len() < ratios.len() {
        return Err(Error::Size(format!(
            "{} files cannot fill {} parts",
            files.len(),
            ratios.len()
        )));
    }
    let sizes = largest_remainder(files.len(), &ratios)?;
    let mut shuffled = files.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(sizes[0] + sizes[1]);
    let valid = shuffled.split_off(sizes[0]);
    Ok(DatasetSplit { seed, ratios, train: shuffled, valid, test })
}

pub fn split(handle: &CorpusHandle, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    split_files(&handle.files()?, ratios, seed)
}

/// Draws `(group, item)` pairs: a group uniformly, then an item uniformly
/// within it.
pub fn stratified_indices(sizes: &[usize], seed: u64, count: usize) -> Result<Vec<(usize, usize)>> {
    if sizes.is_empty() {
        return Err(Error::Config("no corpora to sample from".into()));
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Config(format!("corpus {i} is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let g = rng.gen_range(0..sizes.len());
            (g, rng.gen_range(0..sizes[g]))
        })
        .collect())
}

/// `count` Music values drawn by picking a corpus uniformly, then a file
/// uniformly within it (and a tune uniformly when the file holds several).
pub fn stratified_sample<'a>(
    handles: &'a [CorpusHandle],
    seed: u64,
    count: usize,
) -> Result<impl Iterator<Item = Result<Music>> + 'a> {
    let files = handles.iter().map(CorpusHandle::files).collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = files.iter().map(Vec::len).collect();
    let draws = stratified_indices(&sizes, seed, count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    Ok(draws.into_iter().map(move |(g, i)| {
        let mut music = handles[g].load(&files[g][i])?;
        match music.len() {
            0 => Err(Error::Format(format!("{} holds no music", files[g][i]))),
            n => Ok(music.swap_remove(rng.gen_range(0..n))),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_manifests_parse() {
        let all = Manifest::builtin();
        assert_eq!(all.len(), 11);
        for m in &all {
            assert!(!m.sources.is_empty());
            assert_eq!(Manifest::from_json(&m.to_json()).unwrap(), *m);
        }
        assert!(Manifest::builtin_named("jsb").is_some());
    }

    #[test]
    fn manifest_rejects_unknown_fields_and_missing_sources() {
        let base = r#"{"name":"x","sources":[],"file_glob":"*.mid","source_format":"midi","license_note":""}"#;
        assert!(matches!(Manifest::from_json(base), Err(Error::Config(_))));
        let extra = base.replace("\"sources\":[]", "\"sources\":[{\"url\":\"file:///x\",\"archive\":\"none\"}],\"bogus\":1");
        assert!(matches!(Manifest::from_json(&extra), Err(Error::Schema(_))));
    }

    #[test]
    fn local_names() {
        let s = |url: &str| Source { url: url.into(), sha256: None, archive: ArchiveKind::Zip, filename: None };
        assert_eq!(s("http://h/a/JSB%20Chorales.zip").local_name(), "JSB Chorales.zip");
        assert_eq!(s("https://h/x.tar.gz?dl=1").local_name(), "x.tar.gz");
    }

    #[test]
    fn remainder_rounding() {
        assert_eq!(largest_remainder(10, &[8.0, 1.0, 1.0]).unwrap(), [8, 1, 1]);
        assert_eq!(largest_remainder(100, &[8.0, 1.0, 1.0]).unwrap(), [80, 10, 10]);
        assert_eq!(largest_remainder(7, &[8.0, 1.0, 1.0]).unwrap(), [5, 1, 1]);
        assert_eq!(largest_remainder(3, &[1.0, 1.0, 1.0]).unwrap(), [1, 1, 1]);
        assert!(largest_remainder(3, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let files: Vec<String> = (0..10).map(|i| format!("f{i:02}.mid")).collect();
        let a = split_files(&files, [8.0, 1.0, 1.0], 7).unwrap();
        let b = split_files(&files, [8.0, 1.0, 1.0], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sizes(), [8, 1, 1]);
        let mut all: Vec<_> = a.train.iter().chain(&a.valid).chain(&a.test).cloned().collect();
        all.sort();
        assert_eq!(all, files);
        assert!(matches!(split_files(&files[..2], [8.0, 1.0, 1.0], 7), Err(Error::Size(_))));
    }

    #[test]
    fn stratified_draws() {
        assert!(stratified_indices(&[3, 0], 1, 5).is_err());
        assert!(stratified_indices(&[3], 1, 0).unwrap().is_empty());
        let draws = stratified_indices(&[2, 5], 9, 50).unwrap();
        assert_eq!(draws, stratified_indices(&[2, 5], 9, 50).unwrap());
        assert!(draws.iter().all(|&(g, i)| i < [2, 5][g]));
    }
}
