//! File-format detection and dispatch to the readers and writers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Music;
use crate::{abc, midi, musicxml, serialization};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Midi,
    Musicxml,
    Mxl,
    Abc,
    Muspy,
}

impl FileFormat {
    /// Infers the format from the file name; `None` for unknown extensions.
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".json") {
            return Some(FileFormat::Muspy);
        }
        match name.rsplit_once('.')?.1 {
            "mid" | "midi" | "smf" | "kar" => Some(FileFormat::Midi),
            "xml" | "musicxml" => Some(FileFormat::Musicxml),
            "mxl" => Some(FileFormat::Mxl),
            "abc" => Some(FileFormat::Abc),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FileFormat::Midi => "midi",
            FileFormat::Musicxml => "musicxml",
            FileFormat::Mxl => "mxl",
            FileFormat::Abc => "abc",
            FileFormat::Muspy => "muspy",
        }
    }
}

/// Parses raw bytes. ABC files may hold several tunes, so every format
/// returns a list.
pub fn read_bytes(bytes: &[u8], format: FileFormat) -> Result<Vec<Music>> {
    let text = || {
        std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("input is not UTF-8: {e}")))
    };
    Ok(match format {
        FileFormat::Midi => vec![midi::read_midi(bytes)?],
        FileFormat::Musicxml => {
            let xml = musicxml::decode_xml_bytes(bytes)
                .ok_or_else(|| Error::Format("undecodable XML text".into()))?;
            vec![musicxml::read_musicxml(&xml)?]
        }
        FileFormat::Mxl => vec![musicxml::read_mxl(bytes)?],
        FileFormat::Abc => abc::read_abc(&abc::decode_abc_bytes(bytes))?,
        FileFormat::Muspy => vec![serialization::load(text()?)?],
    })
}

pub fn read_file(path: &Path, format: Option<FileFormat>) -> Result<Vec<Music>> {
    let format = format
        .or_else(|| FileFormat::from_path(path))
        .ok_or_else(|| Error::InvalidArgument(format!("cannot infer format of {}", path.display())))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_bytes(&bytes, format)
}

pub fn write_bytes(music: &Music, format: FileFormat) -> Result<Vec<u8>> {
    match format {
        FileFormat::Midi => midi::write_midi(music),
        FileFormat::Musicxml => musicxml::write_musicxml(music).map(String::into_bytes),
        FileFormat::Mxl => musicxml::write_mxl(music),
        FileFormat::Muspy => serialization::save(music).map(String::into_bytes),
        FileFormat::Abc => Err(Error::Unsupported("writing ABC".into())),
    }
}

pub fn write_file(music: &Music, path: &Path, format: Option<FileFormat>) -> Result<()> {
    let format = format
        .or_else(|| FileFormat::from_path(path))
        .ok_or_else(|| Error::InvalidArgument(format!("cannot infer format of {}", path.display())))?;
    let bytes = write_bytes(music, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection() {
        let f = |s: &str| FileFormat::from_path(Path::new(s));
        assert_eq!(f("a/b.MID"), Some(FileFormat::Midi));
        assert_eq!(f("x.muspy.json"), Some(FileFormat::Muspy));
        assert_eq!(f("x.musicxml"), Some(FileFormat::Musicxml));
        assert_eq!(f("x.mxl"), Some(FileFormat::Mxl));
        assert_eq!(f("x.abc"), Some(FileFormat::Abc));
        assert_eq!(f("x.xyz"), None);
        assert_eq!(f("noext"), None);
    }

    #[test]
    fn abc_yields_every_tune() {
        let text = b"X:1\nK:C\nC\n\nX:2\nK:G\nG\n";
        assert_eq!(read_bytes(text, FileFormat::Abc).unwrap().len(), 2);
    }
}
