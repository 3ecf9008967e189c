//! Canonical JSON documents (`.muspy.json`).
//!
//! Output is byte-deterministic: keys follow declaration order, event lists
//! are sorted, absent optional fields are omitted, indentation is two spaces
//! and the document ends with a single LF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KeySignature, Metadata, Music, Tempo, TimeSignature, Track, SCHEMA_VERSION};

pub const EXTENSION: &str = ".muspy.json";

#[derive(Serialize)]
struct DocumentRef<'a> {
    schema_version: &'a str,
    metadata: &'a Metadata,
    resolution: u32,
    tempos: &'a [Tempo],
    key_signatures: &'a [KeySignature],
    time_signatures: &'a [TimeSignature],
    tracks: &'a [Track],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[allow(dead_code)]
    schema_version: String,
    metadata: Metadata,
    resolution: u32,
    #[serde(default)]
    tempos: Vec<Tempo>,
    #[serde(default)]
    key_signatures: Vec<KeySignature>,
    #[serde(default)]
    time_signatures: Vec<TimeSignature>,
    #[serde(default)]
    tracks: Vec<Track>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<String>,
}

/// Serializes valid music to its canonical document.
pub fn save(music: &Music) -> Result<String> {
    music.ensure_valid()?;
    let sorted = music.clone().sorted();
    let doc = DocumentRef {
        schema_version: &sorted.metadata.schema_version,
        metadata: &sorted.metadata,
        resolution: sorted.resolution,
        tempos: &sorted.tempos,
        key_signatures: &sorted.key_signatures,
        time_signatures: &sorted.time_signatures,
        tracks: &sorted.tracks,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Format(format!("cannot serialize music: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Parses a canonical document, rejecting unknown keys and invalid values.
pub fn load(text: &str) -> Result<Music> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(json_error)?;
    match probe.schema_version {
        Some(v) if v == SCHEMA_VERSION => {}
        Some(v) => {
            return Err(Error::Version {
                found: v,
                expected: SCHEMA_VERSION.into(),
            })
        }
        None => return Err(Error::Schema("missing key `schema_version`".into())),
    }

    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => Error::Schema(format!("at `{path}`: {inner}")),
            _ => json_error(inner),
        }
    })?;

    let music = Music {
        metadata: doc.metadata,
        resolution: doc.resolution,
        tempos: doc.tempos,
        key_signatures: doc.key_signatures,
        time_signatures: doc.time_signatures,
        tracks: doc.tracks,
    };
    music.ensure_valid()?;
    Ok(music.sorted())
}

fn json_error(e: serde_json::Error) -> Error {
    match e.classify() {
        serde_json::error::Category::Data => Error::Schema(e.to_string()),
        _ => Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    }
}
