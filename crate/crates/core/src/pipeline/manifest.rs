//! JSON-Lines manifests. An optional first line `{"class_names": [...]}`
//! names the label space; every other line is one clip record.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub path: String,
    pub labels: Vec<usize>,
    pub split: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
    pub class_names: Vec<String>,
}

#[derive(Deserialize, Serialize)]
struct Header {
    class_names: Vec<String>,
}

impl Manifest {
    pub fn new(records: Vec<ClipRecord>, class_names: Vec<String>) -> Result<Self> {
        let m = Manifest {
            records,
            class_names,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if let Some(&bad) = r.labels.iter().find(|&&l| l >= self.class_names.len()) {
                return Err(Error::Config(format!(
                    "{}: label {bad} outside {} classes",
                    r.path,
                    self.class_names.len()
                )));
            }
            if !seen.insert((r.split.as_str(), r.path.as_str())) {
                return Err(Error::Config(format!(
                    "duplicate path {} in split {}",
                    r.path, r.split
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Manifest {
        Manifest {
            records: self
                .records
                .iter()
                .filter(|r| r.split == name)
                .cloned()
                .collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Parses JSONL text. Without a header, classes are named by index up to
    /// the largest label seen.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut class_names = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if n == 0 && line.contains("\"class_names\"") {
                class_names = Some(serde_json::from_str::<Header>(line)?.class_names);
                continue;
            }
            records.push(
                serde_json::from_str::<ClipRecord>(line)
                    .map_err(|e| Error::Config(format!("manifest line {}: {e}", n + 1)))?,
            );
        }
        let class_names = class_names.unwrap_or_else(|| {
            let n = records
                .iter()
                .flat_map(|r| r.labels.iter())
                .max()
                .map_or(0, |m| m + 1);
            (0..n).map(|i| i.to_string()).collect()
        });
        Manifest::new(records, class_names)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in std::io::BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Header {
            class_names: self.class_names.clone(),
        })?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}
