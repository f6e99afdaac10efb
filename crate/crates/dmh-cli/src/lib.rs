//! Library surface of the benchmark CLI, kept separate from the binary so
//! integration tests can drive the same code paths.

pub mod bench;
pub mod report;
