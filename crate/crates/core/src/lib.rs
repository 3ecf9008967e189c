//! Symbolic music toolkit.
//!
//! Reads MIDI, MusicXML and ABC into one canonical [`Music`] container,
//! serializes it to a canonical JSON document, encodes it into the
//! event/pitch/piano-roll/note representations, computes objective metrics,
//! manages datasets and runs n-gram perplexity experiments.

pub mod abc;
pub mod diagnostics;
pub mod datasets;
pub mod error;
pub mod formats;
pub mod harness;
pub mod metrics;
pub mod midi;
pub mod model;
pub mod musicxml;
pub mod representations;
pub mod serialization;
pub mod stats;
pub mod theory;

pub use diagnostics::Diagnostics;
pub use error::{Error, Result};
pub use model::{
    Chord, KeySignature, Lyric, Metadata, Mode, Music, Note, SourceFormat, Tempo, Tick,
    TimeSignature, Track, Violation,
};
