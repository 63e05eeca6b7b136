//! Standard MIDI File (SMF) reading, writing, and validation.
//!
//! Supports formats 0 and 1 with PPQ time division. Format 2 and SMPTE
//! division are rejected: the downstream 16th-note grid is defined in beats,
//! so files outside that distribution fail loudly instead of converting
//! to something subtly wrong.
//!
//! All values are immutable after construction and all operations are pure,
//! so everything here is safe to call from any number of threads.

mod parse;
mod validate;
mod write;

pub use parse::parse_smf;
pub use validate::{validate_smf, Severity, ValidationIssue, ValidationReport};
pub use write::write_smf;

use thiserror::Error;

/// SMF format word. `Single` is format 0, `MultiTrack` is format 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Single,
    MultiTrack,
}

/// A parsed Standard MIDI File: format, PPQ division, and tracks holding
/// absolute-tick events.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MidiFile {
    pub format: Format,
    /// Ticks per quarter note; always positive.
    pub division: u16,
    pub tracks: Vec<Track>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Track {
    pub events: Vec<TimedEvent>,
}

/// An event anchored at an absolute tick (deltas are a wire-format detail).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimedEvent {
    pub tick: u64,
    pub event: Event,
}

impl TimedEvent {
    pub fn new(tick: u64, event: Event) -> Self {
        Self { tick, event }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    /// Velocity is always >= 1: a wire NoteOn with velocity 0 is normalized
    /// to `NoteOff` at parse time so downstream code sees one release
    /// encoding.
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8, velocity: u8 },
    /// Meta 0x51; value is microseconds per quarter note.
    Tempo { micros_per_quarter: u32 },
    /// Meta 0x58. The denominator is stored as its log2 (the wire encoding),
    /// so 4/4 is `numerator: 4, denominator_log2: 2`.
    TimeSignature { numerator: u8, denominator_log2: u8 },
    EndOfTrack,
    /// Any other meta event, preserved as opaque bytes.
    OtherMeta { meta_type: u8, data: Vec<u8> },
    /// Any other channel-voice message (controller, program change, pitch
    /// bend, aftertouch), plus system exclusive payloads under status
    /// 0xF0/0xF7. The status byte keeps its channel nibble.
    OtherChannel { status: u8, data: Vec<u8> },
}

impl Event {
    /// Channel nibble for channel-voice events (including sysex-free
    /// `OtherChannel` statuses below 0xF0).
    pub fn channel(&self) -> Option<u8> {
        match self {
            Event::NoteOn { channel, .. } | Event::NoteOff { channel, .. } => Some(*channel),
            Event::OtherChannel { status, .. } if *status < 0xF0 => Some(status & 0x0F),
            _ => None,
        }
    }

    pub fn is_meta(&self) -> bool {
        matches!(
            self,
            Event::Tempo { .. }
                | Event::TimeSignature { .. }
                | Event::EndOfTrack
                | Event::OtherMeta { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("truncated track at byte {offset}: {reason}")]
    TruncatedTrack { offset: usize, reason: String },
    #[error("variable-length quantity longer than 4 bytes at byte {offset}")]
    BadVarLen { offset: usize },
    #[error("unsupported SMF format {format}")]
    UnsupportedFormat { format: u16 },
    #[error("SMPTE time division is unsupported (PPQ required)")]
    SmpteDivision,
    #[error("bad event at byte {offset}: {reason}")]
    BadEvent { offset: usize, reason: String },
    #[error("invariant violation: {reason}")]
    InvariantViolation { reason: String },
}

impl MidiError {
    /// Byte offset of the problem, when the error is positional.
    pub fn offset(&self) -> Option<usize> {
        match self {
            MidiError::MalformedHeader { offset, .. }
            | MidiError::TruncatedTrack { offset, .. }
            | MidiError::BadVarLen { offset }
            | MidiError::BadEvent { offset, .. } => Some(*offset),
            _ => None,
        }
    }

    /// Stable kebab-case code used by validation reports.
    pub fn code(&self) -> &'static str {
        match self {
            MidiError::MalformedHeader { .. } => "malformed-header",
            MidiError::TruncatedTrack { .. } => "truncated-track",
            MidiError::BadVarLen { .. } => "bad-var-len",
            MidiError::UnsupportedFormat { .. } => "unsupported-format",
            MidiError::SmpteDivision => "smpte-division",
            MidiError::BadEvent { .. } => "bad-event",
            MidiError::InvariantViolation { .. } => "invariant-violation",
        }
    }
}

/// Collapse all tracks into one absolute-tick-sorted event list.
///
/// Channel-voice events on channel 9 (percussion, zero-indexed) are dropped;
/// meta events from every track are retained. Order is stable for equal
/// ticks: track index first, then original position within the track.
pub fn merge_to_single_track(file: &MidiFile) -> Vec<(u64, Event)> {
    let mut keyed: Vec<(u64, usize, usize, &Event)> = Vec::new();
    for (track_idx, track) in file.tracks.iter().enumerate() {
        for (pos, te) in track.events.iter().enumerate() {
            if te.event.channel() == Some(9) {
                continue;
            }
            keyed.push((te.tick, track_idx, pos, &te.event));
        }
    }
    keyed.sort_by_key(|&(tick, track_idx, pos, _)| (tick, track_idx, pos));
    keyed
        .into_iter()
        .map(|(tick, _, _, ev)| (tick, ev.clone()))
        .collect()
}
