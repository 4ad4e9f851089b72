pub mod api;
pub mod bus;
pub mod chamber;
pub mod cli;
pub mod compensation;
pub mod config;
pub mod control;
pub mod daemon;
pub mod datastore;
pub mod experiment;
pub mod replay;
pub mod telemetry;
