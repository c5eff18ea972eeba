use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    value: String,
}

/// Append-only keyed store backed by a JSON-lines file.
///
/// Readers share an in-memory index; writes append one line under a lock and
/// then publish the entry. The first value written for a key wins.
#[derive(Debug)]
pub struct KvStore {
    path: Option<PathBuf>,
    index: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl KvStore {
    /// Store that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut index = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    locator: format!("{}:{}", path.display(), lineno + 1),
                    message: e.to_string(),
                })?;
                index.entry(entry.key).or_insert(entry.value);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            index: RwLock::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.index.read().expect("kv index lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("kv index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts `value` unless `key` is present; returns the stored value.
    pub fn put(&self, key: &str, value: &str) -> Result<String> {
        let mut writer = self.writer.lock().expect("kv writer lock");
        if let Some(existing) = self.get(key) {
            return Ok(existing);
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&Entry {
                key: key.to_string(),
                value: value.to_string(),
            })
            .expect("string entry serialises");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.index
            .write()
            .expect("kv index lock")
            .insert(key.to_string(), value.to_string());
        Ok(value.to_string())
    }
}
