//! Library surface of the `glua` binary: run-spec parsing, checkpoint
//! serialization, and the command implementations. Kept as a library so
//! integration tests can drive the pieces directly.

pub mod checkpoint;
pub mod commands;
pub mod spec;
