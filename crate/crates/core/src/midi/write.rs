//! SMF serialization.
//!
//! The writer never uses running status: every channel event carries its
//! status byte, which keeps golden-byte tests simple and is accepted by any
//! compliant reader. Invariants are checked up front and reported as
//! [`MidiError::InvariantViolation`] rather than producing a broken file.

use super::{Event, Format, MidiError, MidiFile, Track};

/// Serialize a [`MidiFile`] into SMF bytes.
///
/// The output re-parses to an event-equivalent file: same absolute-tick note
/// events, tempi, and time signatures.
pub fn write_smf(file: &MidiFile) -> Result<Vec<u8>, MidiError> {
    check_invariants(file)?;

    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    let format_word: u16 = match file.format {
        Format::Single => 0,
        Format::MultiTrack => 1,
    };
    out.extend_from_slice(&format_word.to_be_bytes());
    let ntrks = u16::try_from(file.tracks.len()).map_err(|_| MidiError::InvariantViolation {
        reason: format!("{} tracks exceed the 16-bit track count", file.tracks.len()),
    })?;
    out.extend_from_slice(&ntrks.to_be_bytes());
    out.extend_from_slice(&file.division.to_be_bytes());

    for track in &file.tracks {
        let body = write_track(track)?;
        out.extend_from_slice(b"MTrk");
        let len = u32::try_from(body.len()).map_err(|_| MidiError::InvariantViolation {
            reason: "track body exceeds the 32-bit chunk length".into(),
        })?;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

fn write_track(track: &Track) -> Result<Vec<u8>, MidiError> {
    let mut body = Vec::new();
    let mut last_tick: u64 = 0;
    for te in &track.events {
        let delta = te.tick - last_tick;
        last_tick = te.tick;
        push_vlq(&mut body, delta)?;
        write_event(&mut body, &te.event)?;
    }
    Ok(body)
}

fn write_event(out: &mut Vec<u8>, event: &Event) -> Result<(), MidiError> {
    match event {
        Event::NoteOn {
            channel,
            pitch,
            velocity,
        } => {
            out.push(0x90 | channel);
            out.push(*pitch);
            out.push(*velocity);
        }
        Event::NoteOff {
            channel,
            pitch,
            velocity,
        } => {
            out.push(0x80 | channel);
            out.push(*pitch);
            out.push(*velocity);
        }
        Event::Tempo { micros_per_quarter } => {
            out.extend_from_slice(&[0xFF, 0x51, 0x03]);
            let m = micros_per_quarter;
            out.extend_from_slice(&[(m >> 16) as u8, (m >> 8) as u8, *m as u8]);
        }
        Event::TimeSignature {
            numerator,
            denominator_log2,
        } => {
            // 24 MIDI clocks per metronome click, 8 32nds per quarter: the
            // conventional values.
            out.extend_from_slice(&[0xFF, 0x58, 0x04, *numerator, *denominator_log2, 24, 8]);
        }
        Event::EndOfTrack => out.extend_from_slice(&[0xFF, 0x2F, 0x00]),
        Event::OtherMeta { meta_type, data } => {
            out.extend_from_slice(&[0xFF, *meta_type]);
            push_vlq(out, data.len() as u64)?;
            out.extend_from_slice(data);
        }
        Event::OtherChannel { status, data } => {
            out.push(*status);
            if *status == 0xF0 || *status == 0xF7 {
                push_vlq(out, data.len() as u64)?;
            }
            out.extend_from_slice(data);
        }
    }
    Ok(())
}

fn push_vlq(out: &mut Vec<u8>, value: u64) -> Result<(), MidiError> {
    if value > 0x0FFF_FFFF {
        return Err(MidiError::InvariantViolation {
            reason: format!("delta time {value} exceeds the 28-bit variable-length range"),
        });
    }
    let value = value as u32;
    let mut buf = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        buf[n] = (v & 0x7F) as u8;
        v >>= 7;
        n += 1;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let mut byte = buf[i];
        if i != 0 {
            byte |= 0x80;
        }
        out.push(byte);
    }
    Ok(())
}

fn check_invariants(file: &MidiFile) -> Result<(), MidiError> {
    let fail = |reason: String| Err(MidiError::InvariantViolation { reason });
    if file.division == 0 {
        return fail("division must be positive".into());
    }
    if file.format == Format::Single && file.tracks.len() != 1 {
        return fail(format!(
            "format 0 requires exactly one track, found {}",
            file.tracks.len()
        ));
    }
    for (i, track) in file.tracks.iter().enumerate() {
        if track.events.is_empty() {
            return fail(format!("track {i} is empty (needs an end-of-track)"));
        }
        let mut last_tick = 0u64;
        for (pos, te) in track.events.iter().enumerate() {
            if te.tick < last_tick {
                return fail(format!(
                    "track {i} event {pos} tick {} precedes tick {last_tick}",
                    te.tick
                ));
            }
            last_tick = te.tick;
            let is_last = pos + 1 == track.events.len();
            if matches!(te.event, Event::EndOfTrack) != is_last {
                return fail(format!(
                    "track {i}: end-of-track must appear exactly once, as the final event"
                ));
            }
            check_event(&te.event).map_err(|reason| MidiError::InvariantViolation {
                reason: format!("track {i} event {pos}: {reason}"),
            })?;
        }
    }
    Ok(())
}

fn check_event(event: &Event) -> Result<(), String> {
    let seven_bit = |name: &str, v: u8| {
        if v > 0x7F {
            Err(format!("{name} {v} exceeds 7 bits"))
        } else {
            Ok(())
        }
    };
    match event {
        Event::NoteOn {
            channel,
            pitch,
            velocity,
        } => {
            if *channel > 15 {
                return Err(format!("channel {channel} exceeds 4 bits"));
            }
            seven_bit("pitch", *pitch)?;
            seven_bit("velocity", *velocity)?;
            if *velocity == 0 {
                return Err("note on with velocity 0 (must be a note off)".into());
            }
        }
        Event::NoteOff {
            channel,
            pitch,
            velocity,
        } => {
            if *channel > 15 {
                return Err(format!("channel {channel} exceeds 4 bits"));
            }
            seven_bit("pitch", *pitch)?;
            seven_bit("velocity", *velocity)?;
        }
        Event::Tempo { micros_per_quarter } => {
            if *micros_per_quarter == 0 || *micros_per_quarter > 0x00FF_FFFF {
                return Err(format!(
                    "tempo {micros_per_quarter} outside the 24-bit positive range"
                ));
            }
        }
        Event::TimeSignature { numerator, .. } => {
            if *numerator == 0 {
                return Err("time signature numerator of zero".into());
            }
        }
        Event::EndOfTrack => {}
        Event::OtherMeta { .. } => {}
        Event::OtherChannel { status, data } => match status {
            0xF0 | 0xF7 => {}
            0x80..=0x9F => {
                return Err(format!(
                    "note events must use the NoteOn/NoteOff variants, not raw status {status:#04X}"
                ))
            }
            0xA0..=0xEF => {
                let expected = match status & 0xF0 {
                    0xC0 | 0xD0 => 1,
                    _ => 2,
                };
                if data.len() != expected {
                    return Err(format!(
                        "status {status:#04X} carries {} data bytes, expected {expected}",
                        data.len()
                    ));
                }
                if let Some(bad) = data.iter().find(|b| **b > 0x7F) {
                    return Err(format!("data byte {bad:#04X} has the high bit set"));
                }
            }
            _ => return Err(format!("status {status:#04X} is not writable")),
        },
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_smf;
    use super::super::{Event, Format, MidiFile, TimedEvent, Track};
    use super::*;

    fn one_note_file() -> MidiFile {
        MidiFile {
            format: Format::Single,
            division: 480,
            tracks: vec![Track {
                events: vec![
                    TimedEvent::new(
                        0,
                        Event::NoteOn {
                            channel: 0,
                            pitch: 60,
                            velocity: 64,
                        },
                    ),
                    TimedEvent::new(
                        480,
                        Event::NoteOff {
                            channel: 0,
                            pitch: 60,
                            velocity: 0,
                        },
                    ),
                    TimedEvent::new(480, Event::EndOfTrack),
                ],
            }],
        }
    }

    #[test]
    fn one_note_round_trips_to_identical_events() {
        let f = one_note_file();
        let bytes = write_smf(&f).unwrap();
        let g = parse_smf(&bytes).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn one_note_bytes_match_hand_assembled_oracle() {
        // Byte-level oracle assembled by hand from the SMF layout.
        let expected: Vec<u8> = vec![
            0x4D, 0x54, 0x68, 0x64, 0x00, 0x00, 0x00, 0x06, //
            0x00, 0x00, 0x00, 0x01, 0x01, 0xE0, //
            0x4D, 0x54, 0x72, 0x6B, 0x00, 0x00, 0x00, 0x0D, //
            0x00, 0x90, 0x3C, 0x40, //
            0x83, 0x60, 0x80, 0x3C, 0x00, //
            0x00, 0xFF, 0x2F, 0x00,
        ];
        assert_eq!(write_smf(&one_note_file()).unwrap(), expected);
    }

    #[test]
    fn missing_end_of_track_is_invariant_violation() {
        let mut f = one_note_file();
        f.tracks[0].events.pop();
        assert!(matches!(
            write_smf(&f),
            Err(MidiError::InvariantViolation { .. })
        ));
    }

    #[test]
    fn out_of_order_ticks_are_invariant_violation() {
        let mut f = one_note_file();
        f.tracks[0].events[1].tick = 0;
        f.tracks[0].events[0].tick = 100;
        assert!(matches!(
            write_smf(&f),
            Err(MidiError::InvariantViolation { .. })
        ));
    }

    #[test]
    fn note_on_velocity_zero_is_invariant_violation() {
        let mut f = one_note_file();
        f.tracks[0].events[0] = TimedEvent::new(
            0,
            Event::NoteOn {
                channel: 0,
                pitch: 60,
                velocity: 0,
            },
        );
        assert!(matches!(
            write_smf(&f),
            Err(MidiError::InvariantViolation { .. })
        ));
    }

    #[test]
    fn vlq_encoding_matches_reference_values() {
        // Reference pairs from the SMF specification appendix.
        let cases: Vec<(u64, Vec<u8>)> = vec![
            (0x00, vec![0x00]),
            (0x40, vec![0x40]),
            (0x7F, vec![0x7F]),
            (0x80, vec![0x81, 0x00]),
            (0x2000, vec![0xC0, 0x00]),
            (0x3FFF, vec![0xFF, 0x7F]),
            (0x4000, vec![0x81, 0x80, 0x00]),
            (0x0FFF_FFFF, vec![0xFF, 0xFF, 0xFF, 0x7F]),
        ];
        for (value, expected) in cases {
            let mut out = Vec::new();
            push_vlq(&mut out, value).unwrap();
            assert_eq!(out, expected, "vlq({value:#X})");
        }
        let mut out = Vec::new();
        assert!(push_vlq(&mut out, 0x1000_0000).is_err());
    }

    #[test]
    fn tempo_and_time_signature_round_trip() {
        let f = MidiFile {
            format: Format::Single,
            division: 96,
            tracks: vec![Track {
                events: vec![
                    TimedEvent::new(
                        0,
                        Event::Tempo {
                            micros_per_quarter: 500_000,
                        },
                    ),
                    TimedEvent::new(
                        0,
                        Event::TimeSignature {
                            numerator: 3,
                            denominator_log2: 2,
                        },
                    ),
                    TimedEvent::new(96, Event::EndOfTrack),
                ],
            }],
        };
        let g = parse_smf(&write_smf(&f).unwrap()).unwrap();
        assert_eq!(f, g);
    }
}
