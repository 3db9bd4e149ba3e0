mod args;
mod commands;
mod config;
mod failure;
mod output;
mod pipeline;

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(commands::run(std::env::args_os()))
}
