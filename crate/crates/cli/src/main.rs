mod args;
mod commands;
mod config;
mod dataset;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};
use segrank::par::{self, Threads};

use args::{Cli, Command};
use commands::Globals;
use error::CliError;

fn threads(requested: Option<usize>, command: &Command) -> Threads {
    let n = requested.unwrap_or(match command {
        Command::Bench(_) => 1,
        _ => 0,
    });
    if n == 1 {
        return Threads::Sequential;
    }
    if n > 1 {
        par::init_pool(n);
    }
    Threads::Pool
}

fn run() -> Result<(), CliError> {
    let mut cmd = Cli::command();
    cmd.build();
    let argv = config::merge(std::env::args_os().collect(), &cmd)?;
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    eprintln!("{}", config::resolved(&cmd, &matches));
    let g = Globals {
        threads: threads(cli.threads, &cli.command),
        json: cli.json,
    };
    match &cli.command {
        Command::Datagen(a) => commands::datagen(a, &g),
        Command::Train(a) => commands::train(a, &g),
        Command::Segment(a) => commands::segment(a),
        Command::Explain(a) => commands::explain(a, &g),
        Command::Lime(a) => commands::lime(a, &g),
        Command::EvalDeletion(a) => commands::eval_deletion(a, &g),
        Command::EvalTopk(a) => commands::eval_topk(a, &g),
        Command::Bench(a) => commands::bench(a, &g),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("{msg}"),
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
