//! Append-only on-disk store of fill-mask responses.
//!
//! Each line is one JSON record. Records are indexed by the SHA-256 of
//! `(backend_id, text)`; the record also stores the `top_k` it was fetched
//! with, so a response for `k` answers any later query with `top_k <= k`.
//! When several records share a key the one with the largest `top_k` wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Prediction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub backend_id: String,
    pub text: String,
    pub top_k: usize,
    pub predictions: Vec<Prediction>,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

pub fn cache_key(backend_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

struct Stored {
    top_k: usize,
    predictions: Vec<Prediction>,
}

pub struct PredictionCache {
    index: RwLock<HashMap<String, Stored>>,
    writer: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl PredictionCache {
    pub fn in_memory() -> Self {
        PredictionCache {
            index: RwLock::new(HashMap::new()),
            writer: None,
            path: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (creating if needed) the store at `path` and loads its index.
    /// A truncated last line, as left by an interrupted run, is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut index = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            needs_newline = !text.is_empty() && !text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            let n = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = match serde_json::from_str(line) {
                    Ok(e) => e,
                    Err(e) if i + 1 == n => {
                        log::warn!("{}: ignoring truncated last record: {e}", path.display());
                        continue;
                    }
                    Err(e) => {
                        return Err(Error::Integrity(format!(
                            "{}:{}: corrupt cache record: {e}",
                            path.display(),
                            i + 1
                        )))
                    }
                };
                if entry.key != cache_key(&entry.backend_id, &entry.text) {
                    return Err(Error::Integrity(format!(
                        "{}:{}: key does not match content",
                        path.display(),
                        i + 1
                    )));
                }
                insert(&mut index, entry.key, entry.top_k, entry.predictions);
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if needs_newline {
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(PredictionCache {
            index: RwLock::new(index),
            writer: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn get(&self, backend_id: &str, text: &str, top_k: usize) -> Option<Vec<Prediction>> {
        let key = cache_key(backend_id, text);
        let index = self.index.read().expect("cache index poisoned");
        match index.get(&key) {
            Some(s) if s.top_k >= top_k => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(s.predictions.iter().take(top_k).cloned().collect())
            }
            _ => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn put(&self, backend_id: &str, text: &str, top_k: usize, predictions: &[Prediction]) -> Result<()> {
        self.put_many(backend_id, top_k, std::iter::once((&text.to_string(), &predictions.to_vec())))
    }

    /// Records a batch of responses fetched with the same `top_k`.
    pub fn put_many<'a>(
        &self,
        backend_id: &str,
        top_k: usize,
        items: impl IntoIterator<Item = (&'a String, &'a Vec<Prediction>)>,
    ) -> Result<()> {
        let timestamp = crate::clock::now_rfc3339();
        let mut records = Vec::new();
        {
            let mut index = self.index.write().expect("cache index poisoned");
            for (text, preds) in items {
                let key = cache_key(backend_id, text);
                if index.get(&key).is_some_and(|s| s.top_k >= top_k) {
                    continue;
                }
                insert(&mut index, key.clone(), top_k, preds.clone());
                records.push(CacheEntry {
                    key,
                    backend_id: backend_id.to_string(),
                    text: text.clone(),
                    top_k,
                    predictions: preds.clone(),
                    timestamp: timestamp.clone(),
                });
            }
        }
        if let (Some(writer), false) = (&self.writer, records.is_empty()) {
            let path = self.path.clone().unwrap_or_default();
            let mut w = writer.lock().expect("cache writer poisoned");
            for r in &records {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn insert(index: &mut HashMap<String, Stored>, key: String, top_k: usize, predictions: Vec<Prediction>) {
    match index.get(&key) {
        Some(s) if s.top_k >= top_k => {}
        _ => {
            index.insert(key, Stored { top_k, predictions });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(tokens: &[&str]) -> Vec<Prediction> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| Prediction::new(*t, 1.0 / (i as f64 + 1.0)))
            .collect()
    }

    #[test]
    fn larger_top_k_answers_smaller_queries() {
        let c = PredictionCache::in_memory();
        c.put("b", "t ⟨MASK⟩.", 3, &preds(&["a", "b", "c"])).unwrap();
        assert_eq!(c.get("b", "t ⟨MASK⟩.", 1).unwrap(), preds(&["a"]));
        assert_eq!(c.get("b", "t ⟨MASK⟩.", 3).unwrap().len(), 3);
        assert!(c.get("b", "t ⟨MASK⟩.", 4).is_none());
        assert!(c.get("other", "t ⟨MASK⟩.", 1).is_none());
        assert_eq!(c.stats(), CacheStats { hits: 2, misses: 2 });
    }

    #[test]
    fn smaller_top_k_does_not_shadow_larger() {
        let c = PredictionCache::in_memory();
        c.put("b", "x", 3, &preds(&["a", "b", "c"])).unwrap();
        c.put("b", "x", 1, &preds(&["z"])).unwrap();
        assert_eq!(c.get("b", "x", 1).unwrap(), preds(&["a"]));
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = PredictionCache::open(&path).unwrap();
            c.put("b", "one", 2, &preds(&["a", "b"])).unwrap();
            c.put("b", "two", 1, &preds(&["c"])).unwrap();
        }
        let c = PredictionCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("b", "one", 2).unwrap(), preds(&["a", "b"]));
        // append-only: reopening and adding keeps earlier lines
        c.put("b", "three", 1, &preds(&["d"])).unwrap();
        drop(c);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn truncated_tail_is_tolerated_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = PredictionCache::open(&path).unwrap();
            c.put("b", "one", 1, &preds(&["a"])).unwrap();
        }
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"key\":\"abc");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(PredictionCache::open(&path).unwrap().len(), 1);

        std::fs::write(&path, format!("garbage\n{text}\n")).unwrap();
        assert!(matches!(PredictionCache::open(&path), Err(Error::Integrity(_))));
    }
}
