//! Plain `key = value` text with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs. Values are consumed with the `take*` methods and
/// [`KeyValues::finish`] rejects anything left over.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {line_no}: expected `key = value`")));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            if entries
                .insert(key.to_string(), (line_no, v.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                Error::Config(format!("line {line}: invalid value `{v}` for `{key}`: {e}"))
            }),
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.take_parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((_, v)) if v.is_empty() => Ok(Some(Vec::new())),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    s.parse().map_err(|e| {
                        Error::Config(format!("line {line}: invalid list item `{s}` for `{key}`: {e}"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Errors on any key that was never taken.
    pub fn finish(self) -> Result<()> {
        if let Some((k, (line, _))) = self.entries.iter().next() {
            let loc = if *line > 0 {
                format!("line {line}: ")
            } else {
                String::new()
            };
            return Err(Error::Config(format!("{loc}unknown key `{k}`")));
        }
        Ok(())
    }
}

/// Writes `key = value` lines in the given order.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(key);
        self.out.push_str(" = ");
        self.out.push_str(&value.to_string());
        self.out.push('\n');
        self
    }

    pub fn put_list<V: Display>(&mut self, key: &str, values: &[V]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.put(key, joined.join(","))
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}
