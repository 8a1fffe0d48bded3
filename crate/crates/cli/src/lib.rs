//! The `eigalign` command-line tool.
//!
//! Every subcommand resolves its settings from built-in defaults, an
//! optional `--config` file of `key = value` lines and command-line flags,
//! in that order, then writes the resolved settings and its outputs into a
//! run directory.

mod commands;
pub mod config;
mod sources;

use std::ffi::OsString;
use std::fmt;

use clap::error::{ContextKind, ContextValue, ErrorKind as ClapKind};
use clap::{Arg, ArgAction, Command};

pub use commands::SUBCOMMANDS;
use config::{KeyKind, RunConfig};

/// Failure categories, each with its own exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Validation(String),
    Numeric(String),
    Io(String),
    UnknownFlag(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::UnknownFlag(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = |s: &str| s.replace('\n', " ");
        match self {
            CliError::Validation(m) => write!(f, "error: validation: {}", one_line(m)),
            CliError::Numeric(m) => write!(f, "error: numeric: {}", one_line(m)),
            CliError::Io(m) => write!(f, "error: io: {}", one_line(m)),
            CliError::UnknownFlag(flag) => write!(f, "error: unknown flag {flag}"),
        }
    }
}

impl From<eigalign::Error> for CliError {
    fn from(e: eigalign::Error) -> Self {
        use eigalign::error::ErrorKind;
        match e.kind() {
            ErrorKind::Validation => CliError::Validation(e.to_string()),
            ErrorKind::Numeric => CliError::Numeric(e.to_string()),
            ErrorKind::Io => CliError::Io(e.to_string()),
        }
    }
}

pub(crate) type CliResult<T> = Result<T, CliError>;

fn command() -> Command {
    let mut cmd = Command::new("eigalign")
        .about("Jacobian eigenvector alignment experiments for small generative networks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .disable_help_subcommand(true);
    for sub in SUBCOMMANDS {
        let mut c = Command::new(sub.name).about(sub.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value settings applied before flags"),
        );
        for k in sub.keys() {
            let arg = Arg::new(k.name).long(k.flag).help(k.help);
            c = c.arg(match k.kind {
                KeyKind::Value => arg.value_name("VALUE"),
                KeyKind::Switch => arg.action(ArgAction::SetTrue),
            });
        }
        cmd = cmd.subcommand(c);
    }
    cmd
}

fn clap_failure(e: clap::Error) -> CliError {
    if e.kind() == ClapKind::UnknownArgument {
        let flag = match e.get(ContextKind::InvalidArg) {
            Some(ContextValue::String(s)) => s.clone(),
            _ => String::from("(unnamed)"),
        };
        return CliError::UnknownFlag(flag);
    }
    let text = e.to_string();
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ");
    CliError::Validation(first.to_string())
}

/// Parses `argv` (including the program name) into a subcommand and its
/// resolved configuration.
pub fn parse_args<I, T>(argv: I) -> Result<Option<RunConfig>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => {
            print!("{e}");
            return Ok(None);
        }
        Err(e) => return Err(clap_failure(e)),
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let spec = SUBCOMMANDS.iter().find(|s| s.name == name).expect("registered subcommand");
    let file = match sub.get_one::<String>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
            config::parse_lines(&text, path)?
        }
        None => Vec::new(),
    };
    let mut overrides = Vec::new();
    for k in spec.keys() {
        match k.kind {
            KeyKind::Value => {
                if let Some(v) = sub.get_one::<String>(k.name) {
                    overrides.push((k.name.to_string(), v.clone()));
                }
            }
            KeyKind::Switch => {
                if sub.get_flag(k.name) {
                    overrides.push((k.name.to_string(), "true".to_string()));
                }
            }
        }
    }
    let keys: Vec<_> = spec.keys().collect();
    RunConfig::resolve(name, &keys, &file, &overrides).map(Some)
}

/// Runs the tool and returns its exit code: 0 on success, 1 for invalid
/// input, 2 for numeric failures and 3 for I/O failures. Failures print a
/// single `error: …` line to standard error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_args(argv).and_then(|cfg| match cfg {
        Some(cfg) => commands::run(&cfg),
        None => Ok(()),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
