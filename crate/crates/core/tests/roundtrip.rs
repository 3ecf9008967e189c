//! Round-trip invariants over random music.

mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(config())]

    #[test]
    fn midi(m in smf_music()) {
        midi_round_trip(m)?;
    }

    #[test]
    fn canonical_json(m in any_music()) {
        canonical_json_round_trip(m)?;
    }

    #[test]
    fn event(input in event_input()) {
        event_round_trip(input)?;
    }

    #[test]
    fn note_table(m in any_music()) {
        note_table_round_trip(m)?;
    }

    #[test]
    fn monophonic_pitch(notes in monophonic_notes()) {
        pitch_round_trip(notes)?;
    }
}
