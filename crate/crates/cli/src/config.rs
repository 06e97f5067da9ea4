//! `--config FILE` support: flat `key=value` lines become flags placed
//! right after the subcommand, so explicit flags given later win.

use std::collections::BTreeSet;
use std::fs;

use clap::CommandFactory;
use edgeprompt::{Error, Result};

use crate::Cli;

fn parse_file(path: &str) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config file {path}: {e}")))?;
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("{path}:{}: expected key=value, got '{line}'", n + 1)));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Config(format!("{path}:{}: empty key", n + 1)));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn longs(cmd: &clap::Command) -> BTreeSet<String> {
    cmd.get_arguments().filter_map(|a| a.get_long()).filter(|l| *l != "config").map(str::to_string).collect()
}

fn all_longs(cmd: &clap::Command, into: &mut BTreeSet<String>) {
    into.extend(longs(cmd));
    for sub in cmd.get_subcommands() {
        all_longs(sub, into);
    }
}

/// Rewrites `args` (program name first) with the config file's keys
/// injected. Keys that no subcommand knows are an error; keys that belong
/// to a different subcommand are skipped so one file can serve several.
pub fn inject(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let root = Cli::command();
    let mut cmd = &root;
    let mut depth = 1;
    while let Some(sub) = args.get(depth).and_then(|name| cmd.find_subcommand(name)) {
        cmd = sub;
        depth += 1;
    }
    if depth == 1 {
        return Ok(args);
    }
    let known = longs(cmd);
    let mut everywhere = BTreeSet::new();
    all_longs(&root, &mut everywhere);
    let mut injected = Vec::new();
    for (key, value) in parse_file(&path)? {
        if known.contains(&key) {
            injected.push(format!("--{key}"));
            injected.push(value);
        } else if !everywhere.contains(&key) {
            return Err(Error::Config(format!("{path}: unknown key '{key}'")));
        }
    }
    let mut out = args[..depth].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[depth..]);
    Ok(out)
}
