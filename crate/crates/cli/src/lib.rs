//! Command-line front end: run configuration, the synthetic corpus and the
//! subcommand implementations behind the `prrl` binary.

pub mod commands;
pub mod config;
pub mod synth;

pub use commands::exit_code;
pub use config::RunConfig;
pub use synth::SyntheticGrammarSpec;
