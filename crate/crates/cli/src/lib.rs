//! Experiment orchestration and IO for the `snls` solvers: Monte Carlo
//! ensembles over trials and parameter sweeps, flat-file configuration, and
//! CSV emission of every dataset the command-line front end produces.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod montecarlo;
