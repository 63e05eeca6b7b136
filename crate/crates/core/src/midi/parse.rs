//! SMF byte-stream parser.
//!
//! Total over arbitrary input: every malformed byte sequence maps to a typed
//! [`MidiError`], never a panic. Structural oddities that do not prevent a
//! faithful parse (missing end-of-track, events after end-of-track, unknown
//! chunks, trailing bytes) are reported as warnings through the issue sink
//! used by `validate_smf`.

use super::validate::{Severity, ValidationIssue};
use super::{Event, Format, MidiError, MidiFile, TimedEvent, Track};
use std::collections::HashMap;

/// Parse a complete SMF byte sequence.
pub fn parse_smf(bytes: &[u8]) -> Result<MidiFile, MidiError> {
    let mut issues = Vec::new();
    parse_internal(bytes, &mut issues)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::TruncatedTrack {
                offset: self.pos,
                reason: format!("unexpected end of data while reading {what}"),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, MidiError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16_be(&mut self, what: &str) -> Result<u16, MidiError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32_be(&mut self, what: &str) -> Result<u32, MidiError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most 4 bytes per the SMF spec.
    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value: u32 = 0;
        for i in 0..4 {
            let byte = self.u8("variable-length quantity")?;
            value = (value << 7) | u32::from(byte & 0x7F);
            if byte & 0x80 == 0 {
                return Ok(value);
            }
            if i == 3 {
                break;
            }
        }
        Err(MidiError::BadVarLen { offset: start })
    }
}

pub(super) fn parse_internal(
    bytes: &[u8],
    issues: &mut Vec<ValidationIssue>,
) -> Result<MidiFile, MidiError> {
    let mut cur = Cursor::new(bytes);

    // Header chunk.
    if cur.remaining() < 4 || &bytes[0..4] != b"MThd" {
        return Err(MidiError::MalformedHeader {
            offset: 0,
            reason: "missing MThd chunk id".into(),
        });
    }
    cur.pos = 4;
    let header_len = map_header_eof(cur.u32_be("header length"))? as usize;
    if header_len < 6 {
        return Err(MidiError::MalformedHeader {
            offset: 4,
            reason: format!("header length {header_len} < 6"),
        });
    }
    let format_word = map_header_eof(cur.u16_be("format word"))?;
    let ntrks = map_header_eof(cur.u16_be("track count"))?;
    let division_word = map_header_eof(cur.u16_be("division"))?;
    if header_len > 6 {
        issues.push(ValidationIssue::new(
            Severity::Warning,
            "oversized-header",
            cur.pos,
            format!("header declares {header_len} bytes, skipping {} extra", header_len - 6),
        ));
        map_header_eof(cur.take(header_len - 6, "oversized header").map(|_| ()))?;
    }

    if division_word & 0x8000 != 0 {
        return Err(MidiError::SmpteDivision);
    }
    if division_word == 0 {
        return Err(MidiError::MalformedHeader {
            offset: 12,
            reason: "time division of zero ticks per quarter".into(),
        });
    }
    let format = match format_word {
        0 => Format::Single,
        1 => Format::MultiTrack,
        other => return Err(MidiError::UnsupportedFormat { format: other }),
    };
    if format == Format::Single && ntrks != 1 {
        return Err(MidiError::MalformedHeader {
            offset: 10,
            reason: format!("format 0 must declare exactly 1 track, found {ntrks}"),
        });
    }

    // Track chunks; unknown chunk types are skipped per the SMF spec.
    let mut tracks = Vec::with_capacity(ntrks as usize);
    while tracks.len() < ntrks as usize {
        let chunk_start = cur.pos;
        let id = cur.take(4, "chunk id")?;
        let len = cur.u32_be("chunk length")? as usize;
        if cur.remaining() < len {
            return Err(MidiError::TruncatedTrack {
                offset: chunk_start,
                reason: format!(
                    "chunk declares {len} bytes but only {} remain",
                    cur.remaining()
                ),
            });
        }
        if id != b"MTrk" {
            issues.push(ValidationIssue::new(
                Severity::Warning,
                "unknown-chunk",
                chunk_start,
                format!("skipping unknown chunk {:02X?}", id),
            ));
            cur.pos += len;
            continue;
        }
        let body_start = cur.pos;
        let track = parse_track(&bytes[body_start..body_start + len], body_start, issues)?;
        cur.pos = body_start + len;
        tracks.push(track);
    }

    if cur.remaining() > 0 {
        issues.push(ValidationIssue::new(
            Severity::Warning,
            "trailing-data",
            cur.pos,
            format!("{} byte(s) after the last declared track", cur.remaining()),
        ));
    }

    Ok(MidiFile {
        format,
        division: division_word,
        tracks,
    })
}

/// A truncation inside the 14-byte header is a header problem, not a track one.
fn map_header_eof<T>(r: Result<T, MidiError>) -> Result<T, MidiError> {
    r.map_err(|e| match e {
        MidiError::TruncatedTrack { offset, reason } => {
            MidiError::MalformedHeader { offset, reason }
        }
        other => other,
    })
}

fn parse_track(
    body: &[u8],
    base_offset: usize,
    issues: &mut Vec<ValidationIssue>,
) -> Result<Track, MidiError> {
    let mut cur = Cursor::new(body);
    let mut events: Vec<TimedEvent> = Vec::new();
    let mut tick: u64 = 0;
    let mut running_status: Option<u8> = None;
    let mut eot_tick: Option<u64> = None;
    let mut open_notes: HashMap<(u8, u8), u32> = HashMap::new();
    let mut warned_after_eot = false;

    let off = |c: &Cursor<'_>| base_offset + c.pos;

    while cur.remaining() > 0 {
        let delta = cur.vlq().map_err(|e| rebase(e, base_offset))?;
        tick += u64::from(delta);

        if eot_tick.is_some() && !warned_after_eot {
            issues.push(ValidationIssue::new(
                Severity::Warning,
                "events-after-end-of-track",
                off(&cur),
                "events continue after an end-of-track meta".to_string(),
            ));
            warned_after_eot = true;
        }

        let event_offset = off(&cur);
        let first = cur.u8("event status").map_err(|e| rebase(e, base_offset))?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            // Running status: rewind the data byte and reuse the last status.
            cur.pos -= 1;
            running_status.ok_or(MidiError::BadEvent {
                offset: event_offset,
                reason: "data byte with no running status".into(),
            })?
        };

        let event = match status {
            0x80..=0xEF => {
                running_status = Some(status);
                parse_channel_event(&mut cur, status, base_offset)?
            }
            0xF0 | 0xF7 => {
                running_status = None;
                let len = cur.vlq().map_err(|e| rebase(e, base_offset))? as usize;
                let data = cur
                    .take(len, "sysex payload")
                    .map_err(|e| rebase(e, base_offset))?
                    .to_vec();
                Some(Event::OtherChannel { status, data })
            }
            0xFF => {
                running_status = None;
                parse_meta_event(&mut cur, base_offset)?
            }
            other => {
                return Err(MidiError::BadEvent {
                    offset: event_offset,
                    reason: format!("status byte {other:#04X} is not valid in an SMF track"),
                })
            }
        };

        let Some(event) = event else { continue };
        match &event {
            Event::EndOfTrack => {
                eot_tick = Some(eot_tick.map_or(tick, |t: u64| t.max(tick)));
                // Kept out of the list; a single final one is appended below.
            }
            Event::NoteOn { channel, pitch, .. } => {
                *open_notes.entry((*channel, *pitch)).or_insert(0) += 1;
                events.push(TimedEvent::new(tick, event));
            }
            Event::NoteOff { channel, pitch, .. } => {
                if let Some(n) = open_notes.get_mut(&(*channel, *pitch)) {
                    *n -= 1;
                    if *n == 0 {
                        open_notes.remove(&(*channel, *pitch));
                    }
                }
                events.push(TimedEvent::new(tick, event));
            }
            _ => events.push(TimedEvent::new(tick, event)),
        }
    }

    if eot_tick.is_none() {
        issues.push(ValidationIssue::new(
            Severity::Warning,
            "missing-end-of-track",
            base_offset + body.len(),
            "track ends without an end-of-track meta".to_string(),
        ));
    }
    if !open_notes.is_empty() {
        let mut keys: Vec<_> = open_notes.keys().copied().collect();
        keys.sort_unstable();
        for (channel, pitch) in keys {
            issues.push(ValidationIssue::new(
                Severity::Warning,
                "unmatched-note-on",
                base_offset + body.len(),
                format!("note on channel {channel} pitch {pitch} is never released"),
            ));
        }
    }

    let final_tick = eot_tick.unwrap_or(tick).max(tick);
    events.push(TimedEvent::new(final_tick, Event::EndOfTrack));
    Ok(Track { events })
}

/// Channel-voice message. NoteOn with velocity 0 becomes NoteOff here.
fn parse_channel_event(
    cur: &mut Cursor<'_>,
    status: u8,
    base: usize,
) -> Result<Option<Event>, MidiError> {
    let kind = status & 0xF0;
    let channel = status & 0x0F;
    let n_data = match kind {
        0xC0 | 0xD0 => 1,
        _ => 2,
    };
    let start = base + cur.pos;
    let mut data = [0u8; 2];
    for slot in data.iter_mut().take(n_data) {
        let b = cur.u8("channel event data").map_err(|e| rebase(e, base))?;
        if b & 0x80 != 0 {
            return Err(MidiError::BadEvent {
                offset: start,
                reason: format!("data byte {b:#04X} has the high bit set"),
            });
        }
        *slot = b;
    }
    Ok(Some(match kind {
        0x90 if data[1] > 0 => Event::NoteOn {
            channel,
            pitch: data[0],
            velocity: data[1],
        },
        0x90 => Event::NoteOff {
            channel,
            pitch: data[0],
            velocity: 0,
        },
        0x80 => Event::NoteOff {
            channel,
            pitch: data[0],
            velocity: data[1],
        },
        _ => Event::OtherChannel {
            status,
            data: data[..n_data].to_vec(),
        },
    }))
}

fn parse_meta_event(cur: &mut Cursor<'_>, base: usize) -> Result<Option<Event>, MidiError> {
    let type_offset = base + cur.pos;
    let meta_type = cur.u8("meta type").map_err(|e| rebase(e, base))?;
    let len = cur.vlq().map_err(|e| rebase(e, base))? as usize;
    let data = cur
        .take(len, "meta payload")
        .map_err(|e| rebase(e, base))?;
    Ok(Some(match meta_type {
        0x51 => {
            if len != 3 {
                return Err(MidiError::BadEvent {
                    offset: type_offset,
                    reason: format!("tempo meta must carry 3 bytes, found {len}"),
                });
            }
            let micros =
                (u32::from(data[0]) << 16) | (u32::from(data[1]) << 8) | u32::from(data[2]);
            if micros == 0 {
                return Err(MidiError::BadEvent {
                    offset: type_offset,
                    reason: "tempo of zero microseconds per quarter".into(),
                });
            }
            Event::Tempo {
                micros_per_quarter: micros,
            }
        }
        0x58 => {
            if len != 4 {
                return Err(MidiError::BadEvent {
                    offset: type_offset,
                    reason: format!("time signature meta must carry 4 bytes, found {len}"),
                });
            }
            if data[0] == 0 {
                return Err(MidiError::BadEvent {
                    offset: type_offset,
                    reason: "time signature numerator of zero".into(),
                });
            }
            // data[2] (metronome clocks) and data[3] (32nds per quarter) are
            // presentation hints; the writer re-emits the standard values.
            Event::TimeSignature {
                numerator: data[0],
                denominator_log2: data[1],
            }
        }
        0x2F => {
            if len != 0 {
                return Err(MidiError::BadEvent {
                    offset: type_offset,
                    reason: format!("end-of-track meta must be empty, found {len} bytes"),
                });
            }
            Event::EndOfTrack
        }
        _ => Event::OtherMeta {
            meta_type,
            data: data.to_vec(),
        },
    }))
}

fn rebase(e: MidiError, base: usize) -> MidiError {
    match e {
        MidiError::TruncatedTrack { offset, reason } => MidiError::TruncatedTrack {
            offset: offset + base,
            reason,
        },
        MidiError::BadVarLen { offset } => MidiError::BadVarLen {
            offset: offset + base,
        },
        MidiError::BadEvent { offset, reason } => MidiError::BadEvent {
            offset: offset + base,
            reason,
        },
        other => other,
    }
}
