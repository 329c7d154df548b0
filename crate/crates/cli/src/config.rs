//! `key=value` configuration files. Blank lines and `#` comments are
//! ignored; keys use the long option names with `_` in place of `-`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use catpose_core::Error;

#[derive(Debug, Default)]
pub struct ConfigFile {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, Error> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                source_name: source.to_string(),
                line: i + 1,
                message: format!("expected key=value, found {line:?}"),
            })?;
            let key = k.trim().replace('-', "_");
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    source_name: source.to_string(),
                    line: i + 1,
                    message: format!("duplicate key {key}"),
                });
            }
        }
        Ok(Self { source: source.to_string(), entries })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Error> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                source_name: self.source.clone(),
                line: *line,
                message: format!("invalid value {v:?} for {key}"),
            }),
        }
    }
}
