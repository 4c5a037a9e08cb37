//! Slow, obviously-correct reference implementations. Tests compare the
//! production code paths against these.

pub mod compat;
pub mod mix;
pub mod scheduler;
