//! Binary piano-roll phrases and their conversions to and from MIDI.
//!
//! A phrase is a 64x84 matrix of {0,1} cells: 64 sixteenth-note steps (four
//! bars of 4/4) by 84 consecutive MIDI pitches. A cell is on iff a quantized
//! note *covers* that step, so note durations survive the encoding. Emission
//! back to MIDI uses exact grid ticks, which makes the phrase -> MIDI ->
//! phrase round trip exact.

use crate::midi::{self, Event, Format, MidiFile, TimedEvent, Track};
use crate::neural::Scalar;
use thiserror::Error;

/// Time steps per phrase: 4 bars of 4/4 at 16th-note resolution.
pub const PHRASE_STEPS: usize = 64;
/// Pitch rows per phrase.
pub const PHRASE_PITCHES: usize = 84;
/// Cells per phrase.
pub const PHRASE_CELLS: usize = PHRASE_STEPS * PHRASE_PITCHES;

#[derive(Debug, Error)]
pub enum RollError {
    #[error("file is not in 4/4 time")]
    NotFourFour,
    #[error("empty phrase list")]
    EmptyInput,
    #[error("non-finite value in input matrix")]
    NonFiniteInput,
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("bad cell value {value} at index {index} (cells must be 0 or 1)")]
    BadCellValue { index: usize, value: u8 },
    #[error("bad conversion config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Midi(#[from] midi::MidiError),
}

/// One 4-bar binary phrase; cells are stored row-major, time-major
/// (`step * 84 + pitch_index`). Construction enforces shape and {0,1} cells.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PianoRollPhrase {
    cells: Vec<u8>,
}

impl std::fmt::Debug for PianoRollPhrase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PianoRollPhrase({} on of {} cells)",
            self.on_count(),
            PHRASE_CELLS
        )
    }
}

impl PianoRollPhrase {
    pub fn zeros() -> Self {
        Self {
            cells: vec![0; PHRASE_CELLS],
        }
    }

    pub fn from_cells(cells: Vec<u8>) -> Result<Self, RollError> {
        if cells.len() != PHRASE_CELLS {
            return Err(RollError::BadShape(format!(
                "expected {PHRASE_CELLS} cells, got {}",
                cells.len()
            )));
        }
        if let Some((index, &value)) = cells.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(RollError::BadCellValue { index, value });
        }
        Ok(Self { cells })
    }

    pub fn get(&self, step: usize, pitch_index: usize) -> bool {
        assert!(step < PHRASE_STEPS && pitch_index < PHRASE_PITCHES);
        self.cells[step * PHRASE_PITCHES + pitch_index] == 1
    }

    pub fn set(&mut self, step: usize, pitch_index: usize, on: bool) {
        assert!(step < PHRASE_STEPS && pitch_index < PHRASE_PITCHES);
        self.cells[step * PHRASE_PITCHES + pitch_index] = u8::from(on);
    }

    /// Raw cells, row-major, time-major; always `PHRASE_CELLS` bytes of 0/1.
    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn on_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&c| c == 0)
    }

    /// Fraction of cells that are on.
    pub fn density(&self) -> f64 {
        self.on_count() as f64 / PHRASE_CELLS as f64
    }
}

/// A note on the 16th-step grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantizedNote {
    pub pitch: u8,
    pub start_step: u64,
    /// Always >= 1: sub-16th notes clamp to one step rather than vanishing.
    pub length_steps: u64,
}

/// Settings for MIDI <-> phrase conversion.
#[derive(Clone, Debug)]
pub struct ConversionConfig {
    /// Lowest MIDI pitch of the 84-pitch window. 24 (C1) covers the
    /// practical piano range.
    pub pitch_low: u8,
    /// Height of the pitch window; the phrase shape fixes this at 84.
    pub pitch_count: usize,
    /// Reject files containing any non-4/4 time signature.
    pub require_four_four: bool,
    /// Tempo stamped on emitted files. The binary roll carries no tempo of
    /// its own, so a neutral default is used.
    pub emit_tempo_bpm: f64,
    /// PPQ of emitted files; must be divisible by 4 so grid steps are exact.
    pub emit_ppq: u16,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self {
            pitch_low: 24,
            pitch_count: PHRASE_PITCHES,
            require_four_four: true,
            emit_tempo_bpm: 120.0,
            emit_ppq: 480,
        }
    }
}

impl ConversionConfig {
    pub fn validate(&self) -> Result<(), RollError> {
        if self.pitch_count != PHRASE_PITCHES {
            return Err(RollError::BadConfig(format!(
                "pitch_count must be {PHRASE_PITCHES}, got {}",
                self.pitch_count
            )));
        }
        if usize::from(self.pitch_low) + self.pitch_count > 128 {
            return Err(RollError::BadConfig(format!(
                "pitch window {}..{} exceeds MIDI pitch 127",
                self.pitch_low,
                usize::from(self.pitch_low) + self.pitch_count
            )));
        }
        if self.emit_ppq == 0 || self.emit_ppq % 4 != 0 {
            return Err(RollError::BadConfig(format!(
                "emit_ppq must be a positive multiple of 4, got {}",
                self.emit_ppq
            )));
        }
        if !(self.emit_tempo_bpm.is_finite() && self.emit_tempo_bpm > 0.0) {
            return Err(RollError::BadConfig(format!(
                "emit_tempo_bpm must be positive, got {}",
                self.emit_tempo_bpm
            )));
        }
        Ok(())
    }
}

/// Nearest 16th-step index for `tick` at the given PPQ (half rounds up).
fn tick_to_step(tick: u64, ppq: u16) -> u64 {
    let ppq = u64::from(ppq);
    // round(tick * 4 / ppq) in integer arithmetic.
    (tick * 8 + ppq) / (2 * ppq)
}

/// Resample matched note pairs onto the 16th-note grid.
///
/// NoteOn/NoteOff pairs are matched per (channel, pitch), first-on first-off.
/// Unmatched NoteOns are closed at the final event tick; notes shorter than
/// one step clamp to length 1.
pub fn quantize_notes(events: &[(u64, Event)], ppq: u16) -> Vec<QuantizedNote> {
    assert!(ppq > 0, "ppq must be positive");
    let final_tick = events.last().map_or(0, |(t, _)| *t);
    let mut open: std::collections::HashMap<(u8, u8), std::collections::VecDeque<u64>> =
        std::collections::HashMap::new();
    let mut notes = Vec::new();
    let mut close = |pitch: u8, start: u64, end: u64| {
        let start_step = tick_to_step(start, ppq);
        let end_step = tick_to_step(end, ppq);
        notes.push(QuantizedNote {
            pitch,
            start_step,
            length_steps: end_step.saturating_sub(start_step).max(1),
        });
    };
    for &(tick, ref event) in events {
        match event {
            Event::NoteOn { channel, pitch, .. } => {
                open.entry((*channel, *pitch)).or_default().push_back(tick);
            }
            Event::NoteOff { channel, pitch, .. } => {
                if let Some(starts) = open.get_mut(&(*channel, *pitch)) {
                    if let Some(start) = starts.pop_front() {
                        close(*pitch, start, tick);
                    }
                }
            }
            _ => {}
        }
    }
    let mut leftovers: Vec<(u8, u64)> = open
        .into_iter()
        .flat_map(|((_, pitch), starts)| starts.into_iter().map(move |s| (pitch, s)))
        .collect();
    leftovers.sort_unstable();
    for (pitch, start) in leftovers {
        close(pitch, start, final_tick);
    }
    notes.sort_unstable_by_key(|n| (n.start_step, n.pitch, n.length_steps));
    notes
}

/// True iff every time-signature event is 4/4 (or none exists; 4/4 is the
/// SMF default).
pub fn check_time_signature(file: &MidiFile) -> bool {
    file.tracks.iter().flat_map(|t| &t.events).all(|te| {
        !matches!(
            te.event,
            Event::TimeSignature {
                numerator,
                denominator_log2,
            } if numerator != 4 || denominator_log2 != 2
        )
    })
}

/// Convert a MIDI file into consecutive 64-step phrases.
///
/// Pipeline: merge tracks, quantize, paint the full-length roll (zero-padded
/// up to whole windows), window into non-overlapping 64-step phrases from
/// step 0. All-zero windows are discarded, so the result can be empty.
pub fn midi_to_phrases(
    file: &MidiFile,
    cfg: &ConversionConfig,
) -> Result<Vec<PianoRollPhrase>, RollError> {
    cfg.validate()?;
    if cfg.require_four_four && !check_time_signature(file) {
        return Err(RollError::NotFourFour);
    }
    let merged = midi::merge_to_single_track(file);
    let notes = quantize_notes(&merged, file.division);

    // The roll extends to the last event (end-of-track included), not just
    // the last note, so deliberate trailing coverage survives windowing.
    let final_step = merged
        .last()
        .map_or(0, |(tick, _)| tick_to_step(*tick, file.division));
    let note_end = notes
        .iter()
        .map(|n| n.start_step + n.length_steps)
        .max()
        .unwrap_or(0);
    // Round up to whole windows: a trailing partial window is zero-padded,
    // and survives only if it contains an on-cell.
    let content_steps = final_step.max(note_end) as usize;
    let total_steps = content_steps.div_ceil(PHRASE_STEPS) * PHRASE_STEPS;

    let low = u64::from(cfg.pitch_low);
    let high = low + cfg.pitch_count as u64;
    let mut roll = vec![0u8; total_steps * PHRASE_PITCHES];
    for note in &notes {
        let p = u64::from(note.pitch);
        if p < low || p >= high {
            continue;
        }
        let col = (p - low) as usize;
        let start = note.start_step as usize;
        let end = ((note.start_step + note.length_steps) as usize).min(total_steps);
        for step in start..end {
            roll[step * PHRASE_PITCHES + col] = 1;
        }
    }

    let mut phrases = Vec::new();
    for window in roll.chunks_exact(PHRASE_CELLS) {
        if window.iter().any(|&c| c == 1) {
            phrases.push(PianoRollPhrase::from_cells(window.to_vec())?);
        }
    }
    Ok(phrases)
}

/// Velocity stamped on emitted notes; the binary roll carries no dynamics.
pub const EMIT_VELOCITY: u8 = 100;

/// Emit phrases as a single-track MIDI file on exact grid ticks.
///
/// Phrases are concatenated on the time axis; per pitch, each maximal run of
/// consecutive on-cells becomes one note. The file carries the configured
/// tempo and a 4/4 time signature at tick 0 and always passes validation
/// with no errors and no unmatched-note warnings.
pub fn phrases_to_midi(
    phrases: &[PianoRollPhrase],
    cfg: &ConversionConfig,
) -> Result<MidiFile, RollError> {
    cfg.validate()?;
    if phrases.is_empty() {
        return Err(RollError::EmptyInput);
    }
    let step_ticks = u64::from(cfg.emit_ppq) / 4;
    let total_steps = phrases.len() * PHRASE_STEPS;
    let cell = |step: usize, col: usize| -> bool {
        phrases[step / PHRASE_STEPS].get(step % PHRASE_STEPS, col)
    };

    let micros_per_quarter = (60_000_000.0 / cfg.emit_tempo_bpm).round() as u32;
    let mut events: Vec<TimedEvent> = vec![
        TimedEvent::new(0, Event::Tempo { micros_per_quarter }),
        TimedEvent::new(
            0,
            Event::TimeSignature {
                numerator: 4,
                denominator_log2: 2,
            },
        ),
    ];

    // NoteOffs sort before NoteOns at equal ticks to avoid retrigger
    // ambiguity; the (tick, on, pitch) triple keeps the sort total.
    let mut keyed: Vec<(u64, u8, u8)> = Vec::new();
    for col in 0..PHRASE_PITCHES {
        let pitch = cfg.pitch_low + col as u8;
        let mut run_start: Option<usize> = None;
        for step in 0..=total_steps {
            let on = step < total_steps && cell(step, col);
            match (run_start, on) {
                (None, true) => run_start = Some(step),
                (Some(start), false) => {
                    keyed.push((start as u64 * step_ticks, 1, pitch));
                    keyed.push((step as u64 * step_ticks, 0, pitch));
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    keyed.sort_unstable();
    events.extend(keyed.into_iter().map(|(tick, on, pitch)| {
        let event = if on == 1 {
            Event::NoteOn {
                channel: 0,
                pitch,
                velocity: EMIT_VELOCITY,
            }
        } else {
            Event::NoteOff {
                channel: 0,
                pitch,
                velocity: 0,
            }
        };
        TimedEvent::new(tick, event)
    }));
    events.push(TimedEvent::new(
        total_steps as u64 * step_ticks,
        Event::EndOfTrack,
    ));

    Ok(MidiFile {
        format: Format::Single,
        division: cfg.emit_ppq,
        tracks: vec![Track { events }],
    })
}

/// Threshold a real-valued 64x84 matrix (flat, row-major, time-major) into a
/// phrase. A cell is on iff its entry is strictly greater than `threshold`.
pub fn binarize<F: Scalar>(values: &[F], threshold: F) -> Result<PianoRollPhrase, RollError> {
    if values.len() != PHRASE_CELLS {
        return Err(RollError::BadShape(format!(
            "expected {PHRASE_CELLS} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RollError::NonFiniteInput);
    }
    let cells = values.iter().map(|&v| u8::from(v > threshold)).collect();
    PianoRollPhrase::from_cells(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::validate_smf;
    use crate::rng::SeedRng;

    fn one_note_file(pitch: u8, on_tick: u64, off_tick: u64, ppq: u16) -> MidiFile {
        MidiFile {
            format: Format::Single,
            division: ppq,
            tracks: vec![Track {
                events: vec![
                    TimedEvent::new(
                        on_tick,
                        Event::NoteOn {
                            channel: 0,
                            pitch,
                            velocity: 64,
                        },
                    ),
                    TimedEvent::new(
                        off_tick,
                        Event::NoteOff {
                            channel: 0,
                            pitch,
                            velocity: 0,
                        },
                    ),
                    TimedEvent::new(off_tick, Event::EndOfTrack),
                ],
            }],
        }
    }

    fn random_phrase(rng: &mut SeedRng, on_cells: usize) -> PianoRollPhrase {
        let mut p = PianoRollPhrase::zeros();
        for _ in 0..on_cells {
            p.set(rng.below(PHRASE_STEPS), rng.below(PHRASE_PITCHES), true);
        }
        p
    }

    #[test]
    fn quarter_note_spans_four_steps() {
        let events = vec![
            (
                0,
                Event::NoteOn {
                    channel: 0,
                    pitch: 60,
                    velocity: 64,
                },
            ),
            (
                480,
                Event::NoteOff {
                    channel: 0,
                    pitch: 60,
                    velocity: 0,
                },
            ),
        ];
        let notes = quantize_notes(&events, 480);
        assert_eq!(
            notes,
            vec![QuantizedNote {
                pitch: 60,
                start_step: 0,
                length_steps: 4
            }]
        );
    }

    #[test]
    fn sub_sixteenth_note_clamps_to_length_one() {
        let events = vec![
            (
                0,
                Event::NoteOn {
                    channel: 0,
                    pitch: 60,
                    velocity: 64,
                },
            ),
            (
                30,
                Event::NoteOff {
                    channel: 0,
                    pitch: 60,
                    velocity: 0,
                },
            ),
        ];
        let notes = quantize_notes(&events, 480);
        assert_eq!(notes[0].length_steps, 1);
    }

    #[test]
    fn rounding_matches_hand_arithmetic_at_ppq_96() {
        // Oracle worked by hand: step size 24 ticks; round(50/24) = 2,
        // round(100/24) = 4, length 2.
        let events = vec![
            (
                50,
                Event::NoteOn {
                    channel: 0,
                    pitch: 70,
                    velocity: 80,
                },
            ),
            (
                100,
                Event::NoteOff {
                    channel: 0,
                    pitch: 70,
                    velocity: 0,
                },
            ),
        ];
        let notes = quantize_notes(&events, 96);
        assert_eq!(
            notes,
            vec![QuantizedNote {
                pitch: 70,
                start_step: 2,
                length_steps: 2
            }]
        );
    }

    #[test]
    fn unmatched_note_on_closes_at_final_event_tick() {
        let events = vec![
            (
                0,
                Event::NoteOn {
                    channel: 0,
                    pitch: 60,
                    velocity: 64,
                },
            ),
            (960, Event::EndOfTrack),
        ];
        let notes = quantize_notes(&events, 480);
        assert_eq!(notes[0].length_steps, 8);
    }

    #[test]
    fn quantization_start_steps_are_monotone_in_tick() {
        let mut rng = SeedRng::new(5);
        for _ in 0..50 {
            let ppq = [24u16, 96, 120, 480][rng.below(4)];
            let mut ticks: Vec<u64> = (0..20).map(|_| rng.below(5000) as u64).collect();
            ticks.sort_unstable();
            let steps: Vec<u64> = ticks.iter().map(|&t| tick_to_step(t, ppq)).collect();
            assert!(steps.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn time_signature_gate() {
        let mut file = one_note_file(60, 0, 480, 480);
        assert!(check_time_signature(&file)); // no event: SMF default 4/4
        file.tracks[0].events.insert(
            0,
            TimedEvent::new(
                0,
                Event::TimeSignature {
                    numerator: 4,
                    denominator_log2: 2,
                },
            ),
        );
        assert!(check_time_signature(&file));
        file.tracks[0].events[0] = TimedEvent::new(
            0,
            Event::TimeSignature {
                numerator: 3,
                denominator_log2: 2,
            },
        );
        assert!(!check_time_signature(&file));
    }

    #[test]
    fn single_note_lands_on_hand_computed_cells() {
        // Pitch 60 at ticks 0..480, PPQ 480: steps 0..4, column 60-24 = 36.
        let file = one_note_file(60, 0, 480, 480);
        let phrases = midi_to_phrases(&file, &ConversionConfig::default()).unwrap();
        assert_eq!(phrases.len(), 1);
        let p = &phrases[0];
        for step in 0..PHRASE_STEPS {
            for col in 0..PHRASE_PITCHES {
                let expected = step < 4 && col == 36;
                assert_eq!(p.get(step, col), expected, "step {step} col {col}");
            }
        }
    }

    #[test]
    fn out_of_range_pitches_yield_empty_result() {
        let file = one_note_file(12, 0, 480, 480);
        let phrases = midi_to_phrases(&file, &ConversionConfig::default()).unwrap();
        assert!(phrases.is_empty());
    }

    #[test]
    fn three_four_file_is_rejected() {
        let mut file = one_note_file(60, 0, 480, 480);
        file.tracks[0].events.insert(
            0,
            TimedEvent::new(
                0,
                Event::TimeSignature {
                    numerator: 3,
                    denominator_log2: 2,
                },
            ),
        );
        assert!(matches!(
            midi_to_phrases(&file, &ConversionConfig::default()),
            Err(RollError::NotFourFour)
        ));
    }

    #[test]
    fn phrase_emission_inverts_the_index_oracle() {
        let mut phrase = PianoRollPhrase::zeros();
        for step in 0..4 {
            phrase.set(step, 36, true);
        }
        let cfg = ConversionConfig::default();
        let file = phrases_to_midi(&[phrase], &cfg).unwrap();
        let notes: Vec<&TimedEvent> = file.tracks[0]
            .events
            .iter()
            .filter(|te| matches!(te.event, Event::NoteOn { .. } | Event::NoteOff { .. }))
            .collect();
        assert_eq!(notes.len(), 2);
        assert_eq!(
            notes[0].event,
            Event::NoteOn {
                channel: 0,
                pitch: 60,
                velocity: EMIT_VELOCITY
            }
        );
        assert_eq!(notes[0].tick, 0);
        assert_eq!(notes[1].tick, 480);
    }

    #[test]
    fn empty_phrase_list_is_an_error_but_all_zero_phrase_is_not() {
        let cfg = ConversionConfig::default();
        assert!(matches!(
            phrases_to_midi(&[], &cfg),
            Err(RollError::EmptyInput)
        ));
        let file = phrases_to_midi(&[PianoRollPhrase::zeros()], &cfg).unwrap();
        let bytes = midi::write_smf(&file).unwrap();
        assert!(validate_smf(&bytes).is_valid());
    }

    #[test]
    fn grid_round_trip_is_exact_on_random_phrases() {
        let cfg = ConversionConfig::default();
        let mut rng = SeedRng::new(99);
        for _ in 0..30 {
            let count = 1 + rng.below(4);
            let phrases: Vec<PianoRollPhrase> = (0..count)
                .map(|_| {
                    let cells = 1 + rng.below(200);
                    let mut p = random_phrase(&mut rng, cells);
                    // Guarantee at least one on-cell: all-zero windows are
                    // dropped by design, so they cannot round-trip.
                    p.set(0, 0, true);
                    p
                })
                .collect();
            let file = phrases_to_midi(&phrases, &cfg).unwrap();
            let back = midi_to_phrases(&file, &cfg).unwrap();
            assert_eq!(back, phrases);
        }
    }

    #[test]
    fn emitted_files_validate_clean() {
        let cfg = ConversionConfig::default();
        let mut rng = SeedRng::new(123);
        for _ in 0..20 {
            let count = 1 + rng.below(3);
            let phrases: Vec<PianoRollPhrase> = (0..count)
                .map(|_| {
                    let cells = rng.below(300);
                    random_phrase(&mut rng, cells)
                })
                .collect();
            let file = phrases_to_midi(&phrases, &cfg).unwrap();
            let report = validate_smf(&midi::write_smf(&file).unwrap());
            assert!(report.is_valid(), "{:?}", report.issues);
            assert!(!report.has_warning("unmatched-note-on"));
        }
    }

    #[test]
    fn binarize_thresholds_strictly() {
        let high = vec![0.9f32; PHRASE_CELLS];
        assert_eq!(binarize(&high, 0.5).unwrap().on_count(), PHRASE_CELLS);
        let ties = vec![0.5f32; PHRASE_CELLS];
        assert_eq!(binarize(&ties, 0.5).unwrap().on_count(), 0);
        let mixed: Vec<f32> = (0..PHRASE_CELLS)
            .map(|i| if i % 2 == 0 { 0.2 } else { 0.7 })
            .collect();
        let p = binarize(&mixed, 0.5).unwrap();
        assert_eq!(p.on_count(), PHRASE_CELLS / 2);
        assert!(!p.get(0, 0) && p.get(0, 1));
    }

    #[test]
    fn binarize_rejects_non_finite_and_bad_shape() {
        let mut values = vec![0.0f32; PHRASE_CELLS];
        values[7] = f32::NAN;
        assert!(matches!(
            binarize(&values, 0.5),
            Err(RollError::NonFiniteInput)
        ));
        assert!(matches!(
            binarize(&[0.0f32; 3], 0.5),
            Err(RollError::BadShape(_))
        ));
    }

    #[test]
    fn phrase_constructor_rejects_non_binary_cells() {
        let mut cells = vec![0u8; PHRASE_CELLS];
        cells[10] = 2;
        assert!(matches!(
            PianoRollPhrase::from_cells(cells),
            Err(RollError::BadCellValue { index: 10, value: 2 })
        ));
    }

    #[test]
    fn notes_crossing_window_boundaries_cover_both_windows() {
        // One note spanning steps 60..68 at PPQ 480 (ticks 7200..8160),
        // with the end-of-track at two full windows (tick 15360).
        let mut file = one_note_file(60, 7200, 8160, 480);
        file.tracks[0].events[2].tick = 15360;
        let phrases = midi_to_phrases(&file, &ConversionConfig::default()).unwrap();
        assert_eq!(phrases.len(), 2);
        assert!(phrases[0].get(60, 36) && phrases[0].get(63, 36));
        assert!(phrases[1].get(0, 36) && phrases[1].get(3, 36));
        assert!(!phrases[1].get(4, 36));
    }
}
