//! `bertdesk`: one binary wiring the library into reproducible runs.

mod args;
mod commands;
mod settings;
mod taskio;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::Cli;

enum Failure {
    Usage { reason: String, usage: Option<String> },
    Data(anyhow::Error),
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Usage line of the deepest subcommand named in `argv`.
fn usage_line(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    for arg in argv.iter().skip(1) {
        match arg.to_str().and_then(|a| cmd.find_subcommand(a)) {
            Some(sub) => cmd = sub.clone(),
            None if arg.to_str().is_some_and(|a| a.starts_with('-')) => break,
            None => {}
        }
    }
    cmd.render_usage().to_string()
}

fn usage_failure(err: clap::Error, argv: &[OsString]) -> Failure {
    let rendered = err.render().to_string();
    // the reason is the first paragraph of clap's message
    let reason: Vec<&str> = rendered
        .lines()
        .skip_while(|l| l.trim().is_empty())
        .take_while(|l| !l.trim().is_empty())
        .collect();
    let reason = single_line(&reason.join(" "));
    Failure::Usage {
        reason: reason.trim_start_matches("error: ").to_string(),
        usage: Some(usage_line(argv)),
    }
}

fn run(argv: Vec<OsString>) -> Result<(), Failure> {
    if let Err(e) = Cli::command().try_get_matches_from(&argv) {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            let _ = e.print();
            return Ok(());
        }
    }
    // a lenient first pass finds the config file even when it supplies
    // required settings
    let first = Cli::command()
        .ignore_errors(true)
        .try_get_matches_from(&argv)
        .map_err(|e| usage_failure(e, &argv))?;
    let argv = settings::apply_config_file(&argv, &first)?;
    let matches = Cli::command()
        .try_get_matches_from(&argv)
        .map_err(|e| usage_failure(e, &argv))?;
    let cli = Cli::from_arg_matches(&matches).map_err(|e| usage_failure(e, &argv))?;
    let resolved = settings::resolved_flags(&matches);
    let target = cli.command.resolved_config_path();
    let extra = commands::execute(cli.command).map_err(Failure::Data)?;
    settings::write_resolved(&target, &resolved, &extra).map_err(Failure::Data)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage { reason, usage }) => {
            eprintln!("error: usage: {reason}");
            if let Some(u) = usage {
                eprintln!("{u}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: data: {}", single_line(&format!("{e:#}")));
            ExitCode::from(2)
        }
    }
}
