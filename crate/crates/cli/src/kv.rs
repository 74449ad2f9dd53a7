//! Flat `key = value` configuration: a file, then `--key value` flags on
//! top. Hyphens and underscores in keys are interchangeable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use spikelasso::{Error, Result};

#[derive(Debug, Default)]
pub struct Kv {
    values: BTreeMap<String, String>,
    used: Vec<String>,
}

fn norm(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Kv {
    /// Parses flags; a `config` key names a file read first, which the
    /// remaining flags override.
    pub fn from_args(args: &[String]) -> Result<Kv> {
        let flags = parse_flags(args)?;
        let mut kv = Kv::default();
        if let Some(path) = flags.get("config") {
            kv.values = parse_file(Path::new(path))?;
        }
        for (k, v) in flags {
            if k != "config" {
                kv.values.insert(k, v);
            }
        }
        Ok(kv)
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.used.push(key.to_string());
        self.values.get(key).cloned()
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    pub fn path(&mut self, key: &str) -> Result<PathBuf> {
        self.required::<String>(key).map(PathBuf::from)
    }

    pub fn flag(&mut self, key: &str) -> Result<bool> {
        match self.raw(key).as_deref() {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::Config(format!("{key} = {v:?} is not a boolean"))),
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("{key}: {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Seeds as `a..b` (half-open) or a comma list.
    pub fn seeds(&mut self, key: &str) -> Result<Option<Vec<u64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        if let Some((a, b)) = v.split_once("..") {
            let parse = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
            };
            let (a, b) = (parse(a)?, parse(b)?);
            return Ok(Some((a..b).collect()));
        }
        self.values.insert(key.to_string(), v);
        self.list(key)
    }

    /// Rejects keys nobody asked for.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        let unknown: Vec<&String> = self.values.keys().filter(|k| !self.used.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {unknown:?}")));
        }
        Ok(self.values)
    }
}

fn parse_flags(args: &[String]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let Some(body) = args[i].strip_prefix("--") else {
            return Err(Error::Config(format!("expected --key, got {:?}", args[i])));
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => match args.get(i + 1) {
                Some(v) if !v.starts_with("--") => {
                    i += 1;
                    (body, v.clone())
                }
                _ => (body, "true".to_string()),
            },
        };
        if key.is_empty() {
            return Err(Error::Config("empty flag name".into()));
        }
        out.insert(norm(key), value);
        i += 1;
    }
    Ok(out)
}

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), no + 1)))?;
        out.insert(norm(k), v.trim().to_string());
    }
    Ok(out)
}
