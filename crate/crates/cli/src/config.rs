//! Line-oriented `key = value` configuration merged with flag overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Value,
    /// A presence flag on the command line, `true`/`false` in files.
    Switch,
}

/// One configuration key. `flag` is the key with dashes.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub flag: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    pub kind: KeyKind,
}

pub const fn key(name: &'static str, flag: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        flag,
        default,
        help,
        kind: KeyKind::Value,
    }
}

pub const fn switch(name: &'static str, flag: &'static str, help: &'static str) -> Key {
    Key {
        name,
        flag,
        default: "false",
        help,
        kind: KeyKind::Switch,
    }
}

/// Keys accepted by every subcommand.
pub const COMMON: &[Key] = &[
    key("seed", "seed", "0", "root seed for every random draw"),
    key("out_root", "out-root", "runs", "parent of automatically named run directories"),
    key("run_dir", "run-dir", "", "explicit run directory (overrides out-root)"),
];

/// Name of the resolved configuration written into every run directory.
pub const RESOLVED_FILE: &str = "config.txt";

/// Fully resolved settings of one subcommand invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

fn normalize(k: &str) -> String {
    k.trim().replace('-', "_")
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored. Duplicate keys are rejected.
pub fn parse_lines(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("{origin}:{}: expected key = value", no + 1)))?;
        let k = normalize(k);
        if k.is_empty() {
            return Err(CliError::Validation(format!("{origin}:{}: empty key", no + 1)));
        }
        if out.iter().any(|(e, _)| *e == k) {
            return Err(CliError::Validation(format!("{origin}:{}: duplicate key '{k}'", no + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then `file` entries, then `overrides`, all checked
    /// against `schema`.
    pub fn resolve(
        command: &str,
        schema: &[Key],
        file: &[(String, String)],
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            schema.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        for (k, v) in file.iter().chain(overrides) {
            let Some(slot) = values.get_mut(k) else {
                return Err(CliError::Validation(format!("unknown key '{k}' for {command}")));
            };
            *slot = v.clone();
        }
        Ok(RunConfig {
            command: command.to_string(),
            values,
        })
    }

    pub fn from_file(command: &str, schema: &[Key], path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let entries = parse_lines(&text, &path.display().to_string())?;
        RunConfig::resolve(command, schema, &entries, &[])
    }

    pub fn str(&self, k: &str) -> &str {
        self.values.get(k).map(String::as_str).unwrap_or_else(|| panic!("key '{k}' not in schema"))
    }

    pub fn parse<T: FromStr>(&self, k: &str) -> Result<T, CliError> {
        let v = self.str(k);
        v.parse()
            .map_err(|_| CliError::Validation(format!("invalid value '{v}' for {k}")))
    }

    pub fn flag(&self, k: &str) -> Result<bool, CliError> {
        match self.str(k) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::Validation(format!("invalid value '{v}' for {k}: expected true or false"))),
        }
    }

    /// Comma-separated list; empty means no entries.
    pub fn list<T: FromStr>(&self, k: &str) -> Result<Vec<T>, CliError> {
        let v = self.str(k);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Validation(format!("invalid entry '{s}' in {k}")))
            })
            .collect()
    }

    /// `None` when the value is `auto`.
    pub fn auto<T: FromStr>(&self, k: &str) -> Result<Option<T>, CliError> {
        if self.str(k) == "auto" {
            Ok(None)
        } else {
            self.parse(k).map(Some)
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }

    /// The run directory: `run_dir` if set, else `out_root/<timestamp>-seed<seed>`.
    pub fn run_dir(&self) -> Result<PathBuf, CliError> {
        let explicit = self.str("run_dir");
        if !explicit.is_empty() {
            return Ok(PathBuf::from(explicit));
        }
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
        Ok(Path::new(self.str("out_root")).join(format!("{stamp}-{}-seed{}", self.command, self.seed()?)))
    }

    /// `key = value` lines in key order.
    pub fn render(&self) -> String {
        let mut s = format!("# {}\n", self.command);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[Key] = &[key("steps", "steps", "10", ""), switch("negate", "negate", "")];

    #[test]
    fn comments_blank_lines_and_dashes() {
        let e = parse_lines("# header\n\nsteps = 5 # inline\n  negate=true\n", "f").unwrap();
        assert_eq!(e, vec![("steps".into(), "5".into()), ("negate".into(), "true".into())]);
        assert_eq!(parse_lines("train-steps = 3", "f").unwrap()[0].0, "train_steps");
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        assert!(parse_lines("steps 5", "f").is_err());
        assert!(parse_lines("= 5", "f").is_err());
        assert!(parse_lines("a = 1\na = 2", "f").is_err());
    }

    #[test]
    fn precedence_and_unknown_keys() {
        let file = vec![("steps".to_string(), "20".to_string())];
        let over = vec![("steps".to_string(), "30".to_string())];
        assert_eq!(RunConfig::resolve("x", SCHEMA, &file, &[]).unwrap().str("steps"), "20");
        assert_eq!(RunConfig::resolve("x", SCHEMA, &file, &over).unwrap().str("steps"), "30");
        let c = RunConfig::resolve("x", SCHEMA, &[], &[]).unwrap();
        assert_eq!(c.parse::<usize>("steps").unwrap(), 10);
        assert!(!c.flag("negate").unwrap());
        let bad = vec![("stpes".to_string(), "1".to_string())];
        assert!(matches!(RunConfig::resolve("x", SCHEMA, &bad, &[]), Err(CliError::Validation(_))));
    }

    #[test]
    fn rendered_config_round_trips() {
        let c = RunConfig::resolve("x", SCHEMA, &[("negate".into(), "true".into())], &[]).unwrap();
        let back = RunConfig::resolve("x", SCHEMA, &parse_lines(&c.render(), "r").unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }
}
