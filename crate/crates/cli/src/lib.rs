//! Configuration, file formats and subcommands of the `topopt` binary.

pub mod config;
pub mod driver;
pub mod history;
pub mod vtk;
