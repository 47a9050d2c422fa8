//! Problem files, reports and command implementations behind the
//! `vucalc` binary.

pub mod commands;
pub mod report;
pub mod spec;
