//! Library side of the `mifprop` command-line tool; the binary in
//! `main.rs` is a thin argument-parsing shell over these modules so the
//! integration tests can drive every command in-process.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod lockfile;
pub mod metrics;
pub mod simulate;
pub mod train;
