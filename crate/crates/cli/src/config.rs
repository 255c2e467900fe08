//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Keys carry a dotted
//! section prefix (`problem.p`, `numerics.multistart`, `output.directory`);
//! the only unprefixed key is `command`. Lists are comma separated.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GroundState,
    Reduce,
    Geodesics,
    Cc,
    Constants,
    Homoclinic,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::GroundState, Command::Reduce, Command::Geodesics, Command::Cc, Command::Constants, Command::Homoclinic];

    pub fn name(self) -> &'static str {
        match self {
            Command::GroundState => "ground-state",
            Command::Reduce => "reduce",
            Command::Geodesics => "geodesics",
            Command::Cc => "cc",
            Command::Constants => "constants",
            Command::Homoclinic => "homoclinic",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`, expected one of ground-state, reduce, geodesics, cc, constants, homoclinic"))
    }
}

const SECTIONS: [&str; 3] = ["problem", "numerics", "output"];

#[derive(Debug)]
pub struct RunConfig {
    pub command: Command,
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(RunError::validation(format!("line {}", lineno + 1), "expected `key = value`"));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let valid_key = key == "command"
                || key.split_once('.').is_some_and(|(sec, rest)| SECTIONS.contains(&sec) && !rest.is_empty());
            if !valid_key {
                return Err(RunError::validation(key, "keys must be `command` or start with problem., numerics. or output."));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(RunError::validation(key, "key given twice"));
            }
        }
        let command = entries
            .remove("command")
            .ok_or_else(|| RunError::validation("command", "missing"))?
            .parse()
            .map_err(|m: String| RunError::validation("command", m))?;
        Ok(Self { command, entries, used: RefCell::new(BTreeSet::new()) })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn opt_string(&self, key: &str) -> Option<String> {
        self.raw(key).map(str::to_string)
    }

    pub fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T, RunError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => parse_scalar(key, s),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, RunError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.split(',').map(|item| parse_scalar(key, item.trim())).collect(),
        }
    }

    /// Rejects keys that the selected command never looked at, so typos do
    /// not silently fall back to defaults.
    pub fn check_unused(&self) -> Result<(), RunError> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(RunError::validation(k.clone(), format!("not recognised by the `{}` command", self.command))),
            None => Ok(()),
        }
    }
}

fn parse_scalar<T: FromStr>(key: &str, s: &str) -> Result<T, RunError> {
    s.parse().map_err(|_| RunError::validation(key, format!("cannot parse `{s}`")))
}
