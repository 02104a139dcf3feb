use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvaluationRecord;

/// Cache key: digest of the genotype's dedup key plus the instance id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub prompt_hash: String,
    pub instance_id: String,
}

impl CacheKey {
    pub fn new(dedup_key: &str, instance_id: &str) -> Self {
        CacheKey {
            prompt_hash: prompt_hash(dedup_key),
            instance_id: instance_id.to_owned(),
        }
    }
}

pub fn prompt_hash(dedup_key: &str) -> String {
    Sha256::digest(dedup_key.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: CacheKey,
    record: EvaluationRecord,
}

type Slot = Arc<Mutex<Option<EvaluationRecord>>>;

/// Per-(prompt, instance) memo of evaluation records.
///
/// `get_or_compute` is atomic per key: concurrent callers with the same key
/// wait for a single computation. When opened on a file, every new record
/// is appended as one JSON line and earlier lines are loaded on open.
#[derive(Default)]
pub struct EvalCache {
    slots: Mutex<HashMap<CacheKey, Slot>>,
    sink: Option<Mutex<BufWriter<File>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for EvalCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvalCache")
            .field("entries", &self.len())
            .field("persistent", &self.sink.is_some())
            .finish()
    }
}

impl EvalCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) an append-only cache file.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let mut slots = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Line = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), n + 1),
                    )
                })?;
                slots.insert(entry.key, Arc::new(Mutex::new(Some(entry.record))));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EvalCache {
            slots: Mutex::new(slots),
            sink: Some(Mutex::new(BufWriter::new(file))),
            ..Default::default()
        })
    }

    pub fn len(&self) -> usize {
        self.slots
            .lock()
            .unwrap()
            .values()
            .filter(|s| s.lock().unwrap().is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of computations performed (backend calls).
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn get(&self, key: &CacheKey) -> Option<EvaluationRecord> {
        let slot = self.slots.lock().unwrap().get(key).cloned()?;
        let rec = slot.lock().unwrap().clone();
        rec
    }

    pub fn get_or_compute<E>(
        &self,
        key: &CacheKey,
        compute: impl FnOnce() -> Result<EvaluationRecord, E>,
    ) -> Result<EvaluationRecord, E> {
        let slot = self.slots.lock().unwrap().entry(key.clone()).or_default().clone();
        let mut guard = slot.lock().unwrap();
        if let Some(rec) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(rec.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let rec = compute()?;
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&Line {
                key: key.clone(),
                record: rec.clone(),
            })
            .expect("cache line serialization cannot fail");
            let mut w = sink.lock().unwrap();
            // A failed append only loses persistence; the in-memory entry stays.
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                log::warn!("cache append failed: {e}");
            }
        }
        *guard = Some(rec.clone());
        Ok(rec)
    }
}
