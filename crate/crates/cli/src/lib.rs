//! Library side of the `slam` binary: input parsing, option resolution, run manifests
//! and the subcommands.

pub mod commands;
pub mod io;
pub mod manifest;
pub mod settings;
