//! `influxcl` command-line entry point.
//!
//! Success prints the run directory on stdout and exits 0. Failure prints one
//! line on stderr, `error kind=<class> code=<n> message=<text>`, and exits
//! with the class's code.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use influxcl::Error;

use args::{Cli, Command};

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Runtime = 1,
    Usage = 2,
    InvalidConfig = 3,
    MissingInput = 4,
    RunExists = 5,
}

impl Class {
    fn name(self) -> &'static str {
        match self {
            Class::Runtime => "runtime",
            Class::Usage => "usage",
            Class::InvalidConfig => "invalid-config",
            Class::MissingInput => "missing-input",
            Class::RunExists => "run-exists",
        }
    }

    fn of(err: &Error) -> Class {
        match err {
            Error::InvalidArgument(_)
            | Error::Shape(_)
            | Error::Parse { .. }
            | Error::Json(_)
            | Error::UndefinedSignal(_)
            | Error::UndefinedCorrelation(_) => Class::InvalidConfig,
            Error::MissingInput(_) => Class::MissingInput,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Class::MissingInput
            }
            Error::RunExists(_) => Class::RunExists,
            Error::Diverged { .. } | Error::Io { .. } => Class::Runtime,
        }
    }
}

fn fail(class: Class, message: &str) -> ExitCode {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!(
        "error kind={} code={} message={one_line}",
        class.name(),
        class as u8
    );
    ExitCode::from(class as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        ExitCode::from(Class::Usage as u8)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => {
                    fail(Class::InvalidConfig, &first_line(&e.to_string()))
                }
                _ => fail(Class::Usage, &first_line(&e.to_string())),
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score(a),
        Command::Stability(a) => commands::stability(a),
        Command::Filter(a) => commands::filter(a),
        Command::Buckets(a) => commands::buckets(a),
        Command::Autocl(a) => commands::autocl(a),
        Command::Report(a) => commands::report(a),
        Command::Run(a) => commands::run(a),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(Class::of(&e), &e.to_string()),
    }
}

/// Clap renders multi-line errors; the first line carries the diagnosis.
fn first_line(text: &str) -> String {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ")
        .to_string()
}
