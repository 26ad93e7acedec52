//! Library surface of the `yana` command-line harness, exposed so the
//! integration and acceptance suites can drive the same code paths as the
//! binary.

pub mod checker;
pub mod commands;
