//! `--config` support: a flat JSON object whose keys are flag names.
//!
//! The file's entries are spliced into the argument list directly after the
//! subcommand, ahead of the user's own flags, so explicit flags override
//! the file (the parser lets a later occurrence replace an earlier one).

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::CommandFactory;
use serde_json::Value;

use crate::args::Cli;
use crate::error::CliError;

const GLOBAL_KEYS: [&str; 2] = ["seed", "threads"];

fn allowed_keys(subcommand: &str) -> Vec<String> {
    let cmd = Cli::command();
    let mut keys: Vec<String> = GLOBAL_KEYS.iter().map(|s| s.to_string()).collect();
    if let Some(sub) = cmd.find_subcommand(subcommand) {
        keys.extend(
            sub.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| *l != "config" && *l != "help")
                .map(str::to_owned),
        );
    }
    keys
}

fn value_to_arg(key: &str, v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::config(format!(
            "config key {key:?} must be a string, number or boolean"
        ))),
    }
}

/// Flag arguments derived from the JSON config at `path`.
pub fn config_args(path: &Path, subcommand: &str) -> Result<Vec<OsString>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::config(format!("config {} is not valid JSON: {e}", path.display()))
    })?;
    let Value::Object(map) = value else {
        return Err(CliError::config("config must be a flat JSON object".into()));
    };
    let allowed = allowed_keys(subcommand);
    let mut out = Vec::new();
    for (raw_key, v) in &map {
        let key = raw_key.replace('_', "-");
        if !allowed.contains(&key) {
            return Err(CliError::config(format!(
                "unknown config key {raw_key:?} for `{subcommand}`"
            )));
        }
        out.push(OsString::from(format!("--{key}")));
        out.push(OsString::from(value_to_arg(raw_key, v)?));
    }
    Ok(out)
}

/// Rebuilds argv with the config entries inserted after the subcommand.
pub fn splice(argv: &[OsString], subcommand: &str, extra: Vec<OsString>) -> Vec<OsString> {
    let Some(pos) = argv
        .iter()
        .skip(1)
        .position(|a| a == subcommand)
        .map(|p| p + 1)
    else {
        let mut out = argv.to_vec();
        out.extend(extra);
        return out;
    };
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splice_places_config_before_user_flags() {
        let argv: Vec<OsString> = ["bin", "--seed", "3", "train", "--epochs", "2"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = splice(&argv, "train", vec!["--epochs".into(), "9".into()]);
        let out: Vec<_> = out.iter().map(|s| s.to_str().unwrap()).collect();
        assert_eq!(
            out,
            ["bin", "--seed", "3", "train", "--epochs", "9", "--epochs", "2"]
        );
    }

    #[test]
    fn keys_follow_the_subcommand() {
        let keys = allowed_keys("train");
        assert!(keys.contains(&"learning-rate".to_string()));
        assert!(keys.contains(&"k-train".to_string()));
        assert!(keys.contains(&"seed".to_string()));
        assert!(!keys.contains(&"n-patients".to_string()));
    }
}
