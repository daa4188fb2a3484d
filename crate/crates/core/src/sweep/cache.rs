//! Append-only JSON-lines store of solved points.
//!
//! Every line is one `{"key": ..., "value": ...}` record written with a
//! single `write` on a file opened in append mode, so concurrent writers
//! never interleave partial records. Unreadable lines are skipped.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Bumped whenever solver changes can alter stored results.
pub const SOLVER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    value: Value,
}

pub struct Cache {
    entries: Mutex<HashMap<String, Value>>,
    file: Mutex<File>,
}

/// Hex SHA-256 of the JSON form of `parts`.
pub fn key_of<T: Serialize>(parts: &T) -> Result<String> {
    let text = serde_json::to_string(parts)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

impl Cache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        let text = if path.exists() { std::fs::read_to_string(path)? } else { String::new() };
        for line in text.lines() {
            if let Ok(rec) = serde_json::from_str::<Record>(line) {
                entries.insert(rec.key, rec.value);
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if !text.is_empty() && !text.ends_with('\n') {
            // terminate a torn record so the next append starts cleanly
            file.write_all(b"\n")?;
        }
        Ok(Self {
            entries: Mutex::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let entries = self.entries.lock().expect("cache lock");
        entries.get(key).and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    /// Stores `value` unless it does not survive a JSON round trip exactly
    /// (e.g. non-finite floats), in which case it is silently not cached.
    pub fn put<T: Serialize + DeserializeOwned + PartialEq>(&self, key: &str, value: &T) -> Result<()> {
        let json = serde_json::to_value(value)?;
        match serde_json::from_value::<T>(json.clone()) {
            Ok(back) if back == *value => {}
            _ => return Ok(()),
        }
        let mut line = serde_json::to_string(&Record {
            key: key.to_owned(),
            value: json.clone(),
        })?;
        line.push('\n');
        {
            let mut entries = self.entries.lock().expect("cache lock");
            if entries.contains_key(key) {
                return Ok(());
            }
            entries.insert(key.to_owned(), json);
        }
        self.file.lock().expect("cache lock").write_all(line.as_bytes())?;
        Ok(())
    }
}
