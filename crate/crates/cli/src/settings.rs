//! Config-file merging and the resolved-config echo.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};

use crate::args::Cli;
use crate::Failure;

/// Names of the nested subcommands and the innermost matches.
fn leaf(matches: &ArgMatches) -> (Vec<String>, &ArgMatches) {
    let mut names = Vec::new();
    let mut cur = matches;
    while let Some((name, sub)) = cur.subcommand() {
        names.push(name.to_string());
        cur = sub;
    }
    (names, cur)
}

fn leaf_command(names: &[String]) -> clap::Command {
    let mut cmd = Cli::command();
    for n in names {
        cmd = cmd.find_subcommand(n).expect("parsed subcommand exists").clone();
    }
    cmd
}

/// True for the settings every subcommand shares, which are not echoed.
fn is_plumbing(id: &str) -> bool {
    matches!(id, "help" | "version" | "config" | "resolved_config")
}

fn usage(reason: String) -> Failure {
    Failure::Usage { reason, usage: None }
}

/// Inserts `--key=value` for every config-file entry whose flag was not
/// given on the command line. `pretrain` reads its own config format.
pub fn apply_config_file(argv: &[OsString], first: &ArgMatches) -> Result<Vec<OsString>, Failure> {
    let (names, matches) = leaf(first);
    if names.is_empty() || names == ["pretrain"] {
        return Ok(argv.to_vec());
    }
    let Ok(Some(path)) = matches.try_get_one::<std::path::PathBuf>("config") else {
        return Ok(argv.to_vec());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Data)?;
    let cmd = leaf_command(&names);
    let mut extra: Vec<OsString> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        let v = v.trim();
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && !is_plumbing(a.get_id().as_str()))
            .ok_or_else(|| usage(format!("config line {}: unknown key '{key}'", n + 1)))?;
        if matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}={v}").into());
        } else {
            match v {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(usage(format!("config line {}: '{key}' expects true or false", n + 1))),
            }
        }
    }
    // splice right after the last subcommand name
    let mut pos = 1;
    for name in &names {
        while pos < argv.len() && argv[pos] != name.as_str() {
            pos += 1;
        }
        pos += 1;
    }
    let mut out = argv[..pos.min(argv.len())].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos.min(argv.len())..]);
    Ok(out)
}

/// `key=value` lines for every effective flag, in definition order.
pub fn resolved_flags(matches: &ArgMatches) -> String {
    let (names, matches) = leaf(matches);
    let cmd = leaf_command(&names);
    let mut out = format!("subcommand={}\n", names.join(" "));
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        // pretrain echoes these through its resolved training config
        if is_plumbing(id) || (names == ["pretrain"] && matches!(id, "seed" | "workers")) {
            continue;
        }
        let Some(long) = arg.get_long() else { continue };
        let value = if arg.get_action().takes_values() {
            match matches.get_raw(id) {
                Some(vals) => vals.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","),
                None => continue,
            }
        } else {
            matches.get_flag(id).to_string()
        };
        let _ = writeln!(out, "{long}={value}");
    }
    out
}

pub fn write_resolved(path: &Path, flags: &str, extra: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, format!("{flags}{extra}")).with_context(|| format!("writing {}", path.display()))
}
