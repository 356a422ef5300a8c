//! Append-only response cache keyed by content hash, enabling resumable
//! audits against paid endpoints.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, Message, ModelRequest, ModelResponse};
use crate::error::Result;

/// Content hash of the cache-relevant request fields: backend, prompt, and
/// decode parameters.
pub fn cache_key(request: &ModelRequest) -> String {
    #[derive(Serialize)]
    struct KeyFields<'a> {
        backend: &'a str,
        messages: &'a [Message],
        temperature: f64,
        max_tokens: u32,
    }
    let canonical = serde_json::to_vec(&KeyFields {
        backend: &request.backend,
        messages: &request.messages,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    })
    .expect("request serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: ModelResponse,
}

/// JSON-lines cache file: loaded fully at open, appended on every new entry.
pub struct ResponseCache {
    path: PathBuf,
    map: HashMap<String, ModelResponse>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<ResponseCache> {
        let mut map = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(path)?;
            for line in BufReader::new(file).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line)?;
                map.insert(entry.key, entry.response);
            }
        }
        Ok(ResponseCache {
            path: path.to_path_buf(),
            map,
        })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&ModelResponse> {
        self.map.get(key)
    }

    pub fn put(&mut self, key: String, response: ModelResponse) -> Result<()> {
        if self.map.contains_key(&key) {
            return Ok(());
        }
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let line = serde_json::to_string(&CacheLine {
            key: key.clone(),
            response: response.clone(),
        })?;
        writeln!(file, "{line}")?;
        self.map.insert(key, response);
        Ok(())
    }
}

/// A backend wrapper that consults the cache before calling through.
pub struct CachedBackend<B> {
    inner: B,
    cache: Mutex<ResponseCache>,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> CachedBackend<B> {
        CachedBackend {
            inner,
            cache: Mutex::new(cache),
        }
    }

    pub fn hits_possible(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        let key = cache_key(request);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            let mut resp = hit.clone();
            resp.request_id = request.request_id.clone();
            return Ok(resp);
        }
        let response = self.inner.complete(request)?;
        self.cache
            .lock()
            .expect("cache lock")
            .put(key, response.clone())?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Role, Usage};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct FlakyBackend {
        calls: AtomicUsize,
    }

    impl Backend for FlakyBackend {
        fn name(&self) -> &str {
            "flaky"
        }
        fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(ModelResponse::raw(
                &request.request_id,
                "flaky",
                "Answer: A".into(),
                Usage::default(),
                1,
            ))
        }
    }

    fn request(id: &str, content: &str) -> ModelRequest {
        ModelRequest::new(
            id,
            "flaky",
            vec![Message {
                role: Role::User,
                content: content.into(),
            }],
        )
    }

    #[test]
    fn cache_short_circuits_identical_prompts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let backend = CachedBackend::new(
            FlakyBackend {
                calls: AtomicUsize::new(0),
            },
            ResponseCache::open(&path).unwrap(),
        );
        backend.complete(&request("r1", "same prompt")).unwrap();
        backend.complete(&request("r2", "same prompt")).unwrap();
        backend.complete(&request("r3", "different prompt")).unwrap();
        assert_eq!(backend.inner.calls.load(Ordering::SeqCst), 2);

        // Reopening the cache resumes from disk.
        let backend2 = CachedBackend::new(
            FlakyBackend {
                calls: AtomicUsize::new(0),
            },
            ResponseCache::open(&path).unwrap(),
        );
        backend2.complete(&request("r4", "same prompt")).unwrap();
        assert_eq!(backend2.inner.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn key_depends_on_decode_params() {
        let a = request("r1", "p");
        let mut b = request("r1", "p");
        b.max_tokens = 9;
        assert_ne!(cache_key(&a), cache_key(&b));
    }
}
