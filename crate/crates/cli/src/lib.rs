//! Config parsing, result tables, command dispatch and the acceptance battery
//! behind the `ips` binary.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod run;
pub mod table;
