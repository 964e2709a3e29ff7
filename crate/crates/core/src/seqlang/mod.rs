//! Pulse-sequence language: parser, canonical printer and timeline compiler.
//!
//! ```text
//! sweep tau from 10us to 250us steps 25   # at most one sweep
//! pulse pi/2 +x                           # dur=auto (from the Rabi frequency)
//! delay tau
//! pulse pi +y dur=480ns
//! delay tau
//! acquire echo
//! ```
//!
//! Statements: `pulse <angle> <phase> [dur=<time>|<var>|auto] [at=<time>|<var>]`,
//! `delay <time>|<var>`, `acquire echo|mz|charge [window=<time>]` and
//! `sweep <var> from <time> to <time> steps <n>`. Angles are `pi`, `pi/2`,
//! `<number>deg`, or `auto` (whatever the drive rotates in the explicit
//! duration); phases `+x`, `+y`, `-x`, `-y`; times carry a
//! `ns`/`us`/`ms`/`s` suffix. A pulse with `at=` is placed at an absolute
//! time on top of the sequential schedule and merges with any pulse it
//! overlaps.

mod ast;
mod compile;
mod parse;
mod print;

pub use ast::*;
pub use compile::{compile, compile_sweep, Event, EventKind, Timeline};
pub use parse::parse;
pub use print::print;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Compile { line: usize, message: String },
}

impl SeqError {
    pub(crate) fn compile(line: usize, message: impl Into<String>) -> Self {
        SeqError::Compile { line, message: message.into() }
    }

    pub fn line(&self) -> usize {
        match self {
            SeqError::Parse { line, .. } | SeqError::Compile { line, .. } => *line,
        }
    }
}
