//! Encoders and decoders for the event, pitch, piano-roll and note-table
//! representations.

mod event;
mod note;
mod pianoroll;
mod pitch;

pub use event::{decode_event, decode_event_with_diagnostics, encode_event, EventConfig};
pub use note::{decode_notes, encode_notes, NoteTable};
pub use pianoroll::{decode_pianoroll, encode_pianoroll, PianoRoll, RollMode};
pub use pitch::{
    decode_pitch, encode_pitch, encode_pitch_with_length, OverlapPolicy, PITCH_HOLD, PITCH_REST,
    PITCH_VOCAB_SIZE,
};

use crate::error::{Error, Result};

/// Which scheme produced a token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Event(EventConfig),
    Pitch,
}

impl Encoding {
    pub fn vocab_size(&self) -> usize {
        match self {
            Encoding::Event(c) => c.vocab_size(),
            Encoding::Pitch => PITCH_VOCAB_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub tokens: Vec<u32>,
    pub encoding: Encoding,
    pub resolution: u32,
}

impl EncodedSequence {
    pub fn vocab_size(&self) -> usize {
        self.encoding.vocab_size()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub(crate) fn check_vocabulary(&self) -> Result<()> {
        let v = self.vocab_size() as u32;
        match self.tokens.iter().position(|&t| t >= v) {
            Some(i) => Err(Error::Domain(format!(
                "token {} at position {i} is outside the vocabulary of size {v}",
                self.tokens[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Newline-delimited decimal tokens.
pub fn tokens_to_text(tokens: &[u32]) -> String {
    let mut out = String::with_capacity(tokens.len() * 4);
    for t in tokens {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

pub fn tokens_from_text(text: &str) -> Result<Vec<u32>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse().map_err(|_| Error::Parse {
                line: i + 1,
                column: 1,
                message: format!("{l:?} is not a token"),
            })
        })
        .collect()
}

/// Length-prefixed binary: a little-endian `u32` count followed by one
/// little-endian `u16` per token.
pub fn tokens_to_binary(tokens: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + tokens.len() * 2);
    out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    for &t in tokens {
        let t = u16::try_from(t).map_err(|_| Error::Range(format!("token {t} exceeds u16")))?;
        out.extend_from_slice(&t.to_le_bytes());
    }
    Ok(out)
}

pub fn tokens_from_binary(bytes: &[u8]) -> Result<Vec<u32>> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Truncated("token count".into()))?;
    let n = u32::from_le_bytes(header) as usize;
    let body = &bytes[4..];
    if body.len() != n * 2 {
        return Err(Error::Truncated(format!(
            "expected {n} tokens ({} bytes), found {} bytes",
            n * 2,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
        .collect())
}
