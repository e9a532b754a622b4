//! File formats, diagnostics and the command-line interface around
//! [`nerhd_core`].

pub mod cli;
pub mod diagnostics;
pub mod io;
