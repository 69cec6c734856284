use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of a predicate's text; the cache key component.
pub fn predicate_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    pred: String,
    sid: String,
    v: u8,
}

/// Append-only map from (predicate hash, sample id) to a denotation bit,
/// optionally backed by a line-delimited JSON file.
#[derive(Debug)]
pub struct DenotationCache {
    path: Option<PathBuf>,
    map: RwLock<HashMap<(String, String), bool>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl DenotationCache {
    pub fn in_memory() -> Self {
        DenotationCache {
            path: None,
            map: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (or creates) a cache file and replays every record in it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                        line: lineno + 1,
                        message: e.to_string(),
                    })?;
                let v = rec.v != 0;
                if let Some(prev) = map.insert((rec.pred.clone(), rec.sid.clone()), v) {
                    if prev != v {
                        return Err(Error::CacheConflict {
                            pred: rec.pred,
                            sid: rec.sid,
                            stored: prev as u8,
                            new: v as u8,
                        });
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(DenotationCache {
            path: Some(path.to_path_buf()),
            map: RwLock::new(map),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, pred_hash: &str, sid: &str) -> Option<bool> {
        self.map
            .read()
            .expect("cache lock")
            .get(&(pred_hash.to_string(), sid.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value. Re-inserting an identical value is a no-op; a
    /// different value for an existing key is rejected.
    pub fn insert(&self, pred_hash: &str, sid: &str, value: bool) -> Result<()> {
        let mut map = self.map.write().expect("cache lock");
        let key = (pred_hash.to_string(), sid.to_string());
        if let Some(&prev) = map.get(&key) {
            if prev != value {
                return Err(Error::CacheConflict {
                    pred: key.0,
                    sid: key.1,
                    stored: prev as u8,
                    new: value as u8,
                });
            }
            return Ok(());
        }
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(w) = writer.as_mut() {
            let rec = CacheRecord {
                pred: key.0.clone(),
                sid: key.1.clone(),
                v: value as u8,
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").map_err(|e| self.io_err(e))?;
        }
        map.insert(key, value);
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        if let Some(w) = self.writer.lock().expect("cache writer lock").as_mut() {
            w.flush().map_err(|e| self.io_err(e))?;
        }
        Ok(())
    }

    /// Order-independent digest of the cache contents.
    pub fn digest(&self) -> String {
        let map = self.map.read().expect("cache lock");
        let mut entries: Vec<_> = map.iter().collect();
        entries.sort();
        let mut h = Sha256::new();
        for ((p, s), v) in entries {
            h.update(p.as_bytes());
            h.update(b"\t");
            h.update(s.as_bytes());
            h.update(if *v { b"\t1\n" } else { b"\t0\n" });
        }
        hex::encode(h.finalize())
    }

    pub fn snapshot(&self) -> HashMap<(String, String), bool> {
        self.map.read().expect("cache lock").clone()
    }

    fn io_err(&self, e: std::io::Error) -> Error {
        Error::io(self.path.clone().unwrap_or_default(), e)
    }
}

impl Drop for DenotationCache {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
