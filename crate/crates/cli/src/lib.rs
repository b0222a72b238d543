//! Library side of the `detscale` command-line tool.

pub mod repro;
pub mod runlog;
pub mod train;
