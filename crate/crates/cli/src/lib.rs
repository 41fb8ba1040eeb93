//! Library backing the `gradhom` binary.
//!
//! The command implementations live here so integration tests can drive the
//! full pipeline in-process instead of shelling out.

pub mod cell_spec;
pub mod commands;
pub mod manifest;
pub mod plotdata;
