//! `key = value` text files used for calibration and pipeline config.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Keys may
//! be dotted (`flow.lambda`). Duplicate keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { path, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn err(&self, key: &str, message: String) -> Error {
        let line = self.entries.get(key).map_or(0, |(l, _)| *l);
        Error::Parse {
            path: self.path.clone(),
            line,
            message,
        }
    }

    /// Parse an optional value.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| self.err(key, format!("cannot parse `{v}` for `{key}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 0,
            message: format!("missing required key `{key}`"),
        })
    }

    /// Overwrite `target` when `key` is present.
    pub fn set_if_present<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *target = v;
        }
        Ok(())
    }

    /// Whitespace-separated list of exactly `n` numbers.
    pub fn require_array(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let raw = self.raw(key).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 0,
            message: format!("missing required key `{key}`"),
        })?;
        let values = raw
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| self.err(key, format!("`{key}` must be a list of numbers")))?;
        if values.len() != n {
            return Err(self.err(
                key,
                format!("`{key}` needs {n} values, got {}", values.len()),
            ));
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dotted_keys() {
        let kv = KeyValues::parse("# header\nflow.lambda = 10 # inline\n\nfps=30\n", "t").unwrap();
        assert_eq!(kv.require::<f64>("flow.lambda").unwrap(), 10.0);
        assert_eq!(kv.get::<u32>("fps").unwrap(), Some(30));
        assert_eq!(kv.get::<u32>("missing").unwrap(), None);
    }

    #[test]
    fn reports_line_numbers() {
        match KeyValues::parse("a = 1\nno equals here\n", "cfg") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(KeyValues::parse("a = 1\na = 2\n", "cfg").is_err());
        let kv = KeyValues::parse("x = nope\n", "cfg").unwrap();
        assert!(matches!(kv.get::<f64>("x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn arrays() {
        let kv = KeyValues::parse("tau = 0 1.5 0\n", "c").unwrap();
        assert_eq!(kv.require_array("tau", 3).unwrap(), vec![0.0, 1.5, 0.0]);
        assert!(kv.require_array("tau", 9).is_err());
    }
}
