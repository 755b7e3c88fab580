//! `--config FILE` support: a TOML table of long flag names merged under the command line.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

/// Returns `args` with every file value the command line did not set appended as a flag.
pub fn merge(cmd: &Command, matches: &ArgMatches, args: Vec<OsString>, path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| anyhow!(crate::UsageError(format!("{}: {e}", path.display()))))?;
    let (name, sub_matches) = matches
        .subcommand()
        .ok_or_else(|| anyhow!(crate::UsageError("no subcommand given".into())))?;
    let sub = cmd.find_subcommand(name).expect("matched subcommand exists");

    let mut out = args;
    for (key, value) in &table {
        let long = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && long != "config")
            .ok_or_else(|| anyhow!(crate::UsageError(format!("unknown config key {key:?} for `{name}`"))))?;
        let id = arg.get_id().as_str();
        if sub_matches.value_source(id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = OsString::from(format!("--{long}"));
        match (arg.get_action(), value) {
            (ArgAction::SetTrue, toml::Value::Boolean(b)) => {
                if *b {
                    out.push(flag);
                }
            }
            (ArgAction::SetTrue, _) => bail!(crate::UsageError(format!("config key {key:?} must be a boolean"))),
            (_, v) => {
                out.push(flag);
                out.push(scalar(key, v)?.into());
            }
        }
    }
    Ok(out)
}

fn scalar(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|i| scalar(key, i))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => bail!(crate::UsageError(format!(
            "config key {key:?} has an unsupported value"
        ))),
    })
}
