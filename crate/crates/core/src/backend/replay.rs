//! Record/replay cache keyed by request fingerprint.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub fingerprint: String,
    pub request_digest: String,
    pub response: String,
}

pub enum ReplayMode {
    /// Misses are errors.
    Strict,
    /// Misses go to the inner backend and are appended to the cache file.
    Record(Box<dyn ChatBackend>),
}

pub struct ReplayCache {
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<String, String>>,
    writer: Mutex<()>,
    mode: ReplayMode,
}

impl ReplayCache {
    pub fn in_memory(mode: ReplayMode) -> Self {
        ReplayCache { path: None, entries: RwLock::new(BTreeMap::new()), writer: Mutex::new(()), mode }
    }

    /// Opens (or, in record mode, starts) a JSONL cache file.
    pub fn open(path: &Path, mode: ReplayMode) -> Result<Self, BackendError> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| BackendError::Refusal(format!("cache line {}: {e}", n + 1)))?;
                entries.insert(rec.fingerprint, rec.response);
            }
        } else if matches!(mode, ReplayMode::Strict) {
            return Err(BackendError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("replay cache {} not found", path.display()),
            )));
        }
        Ok(ReplayCache { path: Some(path.to_path_buf()), entries: RwLock::new(entries), writer: Mutex::new(()), mode })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, request: &ChatRequest, response: &str) -> Result<(), BackendError> {
        let _guard = self.writer.lock().expect("writer lock");
        let fp = request.fingerprint();
        {
            let mut entries = self.entries.write().expect("cache lock");
            if entries.contains_key(&fp) {
                return Ok(());
            }
            entries.insert(fp.clone(), response.to_string());
        }
        if let Some(path) = &self.path {
            let rec = CacheRecord { fingerprint: fp, request_digest: request.digest(), response: response.to_string() };
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        Ok(())
    }
}

impl ChatBackend for ReplayCache {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let fp = request.fingerprint();
        if let Some(hit) = self.entries.read().expect("cache lock").get(&fp) {
            return Ok(hit.clone());
        }
        match &self.mode {
            ReplayMode::Strict => Err(BackendError::CacheMiss { fingerprint: fp }),
            ReplayMode::Record(inner) => {
                let response = inner.chat(request)?;
                self.insert(request, &response)?;
                Ok(response)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::backend::Message;
    use crate::model::Env;
    use crate::prompts::Role;

    struct Counting(AtomicUsize);

    impl ChatBackend for Counting {
        fn chat(&self, r: &ChatRequest) -> Result<String, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("reply to {}", r.messages[0].text))
        }
    }

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(Role::Planner, Env::Textcraft, vec![Message::user(text)])
    }

    #[test]
    fn record_then_replay_strictly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let rec = ReplayCache::open(&path, ReplayMode::Record(Box::new(Counting(AtomicUsize::new(0))))).unwrap();
        assert_eq!(rec.chat(&req("a")).unwrap(), "reply to a");
        assert_eq!(rec.chat(&req("a")).unwrap(), "reply to a");
        assert_eq!(rec.len(), 1);

        let strict = ReplayCache::open(&path, ReplayMode::Strict).unwrap();
        assert_eq!(strict.chat(&req("a")).unwrap(), "reply to a");
        assert!(matches!(strict.chat(&req("b")), Err(BackendError::CacheMiss { .. })));
    }

    #[test]
    fn missing_file_in_strict_mode_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ReplayCache::open(&dir.path().join("none.jsonl"), ReplayMode::Strict).is_err());
    }
}
