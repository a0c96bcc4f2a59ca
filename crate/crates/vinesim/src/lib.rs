//! Teleoperation server and command-line tools for the vine robot simulator.

pub mod check;
pub mod config;
pub mod protocol;
pub mod server;
