//! Command-line front end for the multiadmm solver.

pub mod commands;
pub mod config;
pub mod matio;
pub mod problems;
