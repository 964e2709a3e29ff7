//! Simulation of electrically detected spin readout for donors in silicon:
//! pulse-sequence language, Bloch-vector ensembles, charge-trap transients,
//! field-swept spectra and relaxometry fits.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blochsim;
pub mod cli;
pub mod error;
pub mod fitkit;
pub mod rng;
pub mod seqlang;
pub mod spectrum;
pub mod spincore;
pub mod trace;
pub mod trapdyn;

pub use error::{Error, Result};
