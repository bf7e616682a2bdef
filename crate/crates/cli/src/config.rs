//! Key-value config files and the effective configuration echoed into outputs.
//!
//! A config file holds `key = value` lines whose keys are long option names
//! of the chosen subcommand; `#` starts a comment. File entries are spliced
//! into the argument list ahead of the command-line flags, so flags win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use ring_clusters::model::Parameters;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SUBCOMMANDS: [&str; 7] = ["oracle", "solve", "continue", "simulate", "stability", "classify", "shift"];

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(CliError::Config(format!("line {}: invalid key {key:?}", n + 1)));
        }
        if key == "config" {
            return Err(CliError::Config(format!("line {}: config files cannot include other config files", n + 1)));
        }
        out.push((key.replace('_', "-"), value.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Inserts the entries of the `--config` file right after the subcommand name.
pub fn splice_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", Path::new(&path).display())))?;
    let entries = parse_kv(&text)?;
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let mut injected = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => injected.push(format!("--{key}").into()),
            "false" => {}
            _ => injected.push(format!("--{key}={value}").into()),
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend(args[pos + 1..].iter().cloned());
    Ok(out)
}

/// Everything that determines a run's numerical output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub params: Parameters,
    pub options: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &str, params: Parameters) -> Self {
        Self { command: command.to_string(), params, options: BTreeMap::new() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.options.insert(key.to_string(), value.to_string());
    }

    /// SHA-256 of the canonical JSON form, in hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
