//! File formats and the command-line front end for `rhsim-core`.

pub mod cfgfile;
pub mod cli;
pub mod report;
pub mod tracefile;
