// Index-based loops are clearer than iterator chains for the matrix and
// per-sample arithmetic in this crate.
#![allow(clippy::needless_range_loop)]

pub mod attack;
pub mod cues;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train;
