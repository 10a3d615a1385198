//! Command-line orchestration for smrkit.

pub mod args;
pub mod commands;
pub mod io;
pub mod output;
pub mod pipeline;

use anyhow::Result;

pub use args::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    use commands::*;
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Annotate(a) => annotate_cmd(a),
        Command::Diversity(a) => diversity(a),
        Command::Jnd(a) => jnd(a),
        Command::Correlate(a) => correlate(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Optimize(a) => optimize(a),
        Command::Bdrate(a) => bdrate(a),
        Command::Report(a) => report(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Synth(a) => synth(a),
    }
}
