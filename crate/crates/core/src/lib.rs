//! Interlocking modular soundtrack engine.
//!
//! * [`music`]: timebase, pitches, scales, patterns.
//! * [`loopgen`]: seeded generation of bed, collage and announcement material.
//! * [`compat`]: pairwise overlap analysis at every measure offset.
//! * [`scheduler`]: the live layering state machine.
//! * [`render`]: synthesis, mixdown and WAV I/O.
//! * [`trace`]: launch traces, offline session rendering, synthetic visitors.

pub mod compat;
pub mod exec;
pub mod loopgen;
pub mod music;
pub mod render;
pub mod scheduler;
pub mod trace;

pub use exec::Exec;
