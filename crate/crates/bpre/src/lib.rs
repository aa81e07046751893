//! Simulation and numerical verification engine for subcritical branching
//! processes in heavy-tailed i.i.d. random environments.

pub mod asymptotics;
pub mod cli;
pub mod env_models;
pub mod montecarlo;
pub mod numeric;
pub mod process_core;
pub mod validate;

pub use cli::run;
