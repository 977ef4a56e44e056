//! Experiment harness for the particle-filter library: scenario and dataset
//! plumbing, deterministic CSV artifacts, and one command per study.

pub mod commands;
pub mod config;
pub mod csvout;
