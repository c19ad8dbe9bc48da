//! `key = value` config files and the resolved-config banner.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{ArgMatches, Command};

use crate::error::CliError;

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
/// Keys are long flag names, with `_` accepted for `-`.
pub fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), n + 1))
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("{}:{}: empty key", path.display(), n + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Finds `--config FILE` or `--config=FILE` ahead of clap.
fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Whether `--key` was given explicitly on the command line.
fn given(argv: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    let with_value = format!("--{key}=");
    argv.iter().skip(1).any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

/// Appends config-file settings the command line leaves unset, so clap
/// sees flags > config > defaults. Unknown keys surface as clap errors.
pub fn merge(argv: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let entries = parse(&text, path)?;
    let sub = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .find_map(|a| cmd.find_subcommand(&a).cloned());
    let mut out = argv.clone();
    for (key, value) in entries {
        if key == "config" || given(&argv, &key) {
            continue;
        }
        let is_switch = sub
            .iter()
            .chain(std::iter::once(cmd))
            .flat_map(|c| c.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .is_some_and(|a| !a.get_action().takes_values());
        if is_switch {
            match value.as_str() {
                "true" | "1" | "yes" => out.push(format!("--{key}").into()),
                "false" | "0" | "no" | "" => {}
                _ => return Err(CliError::Usage(format!("{key}: expected true or false, got {value:?}"))),
            }
        } else {
            out.push(format!("--{key}={value}").into());
        }
    }
    Ok(out)
}

/// Every argument of the chosen subcommand with its effective value.
pub fn resolved(cmd: &Command, matches: &ArgMatches) -> String {
    let mut lines = vec!["# resolved configuration".to_string()];
    let Some((name, sub_matches)) = matches.subcommand() else {
        return String::new();
    };
    lines.push(format!("command = {name}"));
    let sub = cmd.find_subcommand(name).expect("matched subcommand exists");
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        if id == "help" || id == "version" {
            continue;
        }
        let value = match sub_matches.get_raw(id) {
            Some(vals) => vals.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","),
            None => String::new(),
        };
        let key = arg.get_long().unwrap_or(id);
        lines.push(format!("{key} = {value}"));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments() {
        let got = parse("# c\n\nseg_seed = 7\nalgo=slic\n", Path::new("x")).unwrap();
        assert_eq!(got, vec![("seg-seed".into(), "7".into()), ("algo".into(), "slic".into())]);
        assert!(parse("nonsense\n", Path::new("x")).is_err());
    }

    #[test]
    fn given_matches_both_forms() {
        let argv: Vec<OsString> = ["segrank", "segment", "--seed=3", "--k", "9"].iter().map(Into::into).collect();
        assert!(given(&argv, "seed"));
        assert!(given(&argv, "k"));
        assert!(!given(&argv, "m"));
    }
}
