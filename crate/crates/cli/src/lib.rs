//! Library half of the `seofp` command-line tool: synthetic dataset
//! generation, layer-stack parsing, and the subcommand implementations.
//! The binary in `main.rs` is a thin argument-parsing shell over this.

pub mod arch;
pub mod commands;
pub mod data;
