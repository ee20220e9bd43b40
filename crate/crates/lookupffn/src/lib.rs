//! Command-line front end, checkpoint format, CSV reports and CPU latency
//! benchmarks for [`lookupffn_core`].

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
