//! Symbolic music sentiment transfer toolkit.
//!
//! The pipeline runs in four stages, one module each:
//!
//! * [`midi`] — bit-exact reading, writing, and validation of Standard MIDI
//!   Files (formats 0 and 1).
//! * [`pianoroll`] — conversion between MIDI event streams and binary
//!   64x84 piano-roll phrases (4 bars of 4/4 at 16th-note resolution over
//!   84 pitches), and back to valid MIDI.
//! * [`dataset`] — a valence-labeled two-domain phrase dataset with a mixed
//!   pool of both classes, balanced by seeded downsampling.
//! * [`neural`] + [`cyclegan`] — a dense-tensor numeric core with explicit
//!   forward/backward passes, and the two-generator / six-discriminator
//!   CycleGAN that moves phrases between the negative and positive domains.
//!
//! All numeric code is generic over the scalar type ([`Scalar`], implemented
//! for `f32` and `f64`). Training runs on `f32`; the `f64` instantiation
//! doubles as the shadow computation for finite-difference gradient checks.

pub mod cyclegan;
pub mod dataset;
pub mod midi;
pub mod neural;
pub mod pianoroll;
pub mod rng;

pub use neural::{Scalar, Tensor};

/// Single-precision tensor used by training and inference.
pub type Tensor32 = neural::Tensor<f32>;
/// Double-precision tensor used by gradient-check shadow computations.
pub type Tensor64 = neural::Tensor<f64>;
/// The trainable single-precision model.
pub type CycleGan32 = cyclegan::CycleGan<f32>;
/// Double-precision model instantiation, mainly for numeric experiments.
pub type CycleGan64 = cyclegan::CycleGan<f64>;
