use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ChatRequest, LlmError};

/// Serializes with object keys sorted at every level and no whitespace.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Lowercase hex SHA-256 of the canonical request JSON.
pub fn cache_key(req: &ChatRequest) -> String {
    let v = serde_json::to_value(req).expect("request serializes");
    digest(&canonical_json(&v))
}

/// Same key for a request given as raw JSON envelope text.
pub fn cache_key_json(text: &str) -> Result<String, serde_json::Error> {
    let v: Value = serde_json::from_str(text)?;
    Ok(digest(&canonical_json(&v)))
}

fn digest(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: ChatRequest,
    pub response: String,
    pub created_at: String,
}

/// Response store keyed by [`cache_key`].
#[derive(Debug)]
pub enum ResponseCache {
    /// One `{key}.json` file per entry, written via temp-file rename.
    Dir(PathBuf),
    Memory(Mutex<HashMap<String, CacheEntry>>),
}

impl ResponseCache {
    pub fn dir(path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        std::fs::create_dir_all(&path)
            .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        Ok(ResponseCache::Dir(path))
    }

    pub fn memory() -> Self {
        ResponseCache::Memory(Mutex::new(HashMap::new()))
    }

    fn file(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        match self {
            ResponseCache::Dir(dir) => {
                let text = std::fs::read_to_string(Self::file(dir, key)).ok()?;
                match serde_json::from_str(&text) {
                    Ok(e) => Some(e),
                    Err(e) => {
                        log::warn!("ignoring unreadable cache entry {key}: {e}");
                        None
                    }
                }
            }
            ResponseCache::Memory(m) => m.lock().unwrap().get(key).cloned(),
        }
    }

    pub fn put(&self, key: &str, request: &ChatRequest, response: &str) -> Result<(), LlmError> {
        let entry = CacheEntry {
            request: request.clone(),
            response: response.to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        match self {
            ResponseCache::Dir(dir) => {
                let err = |e: std::io::Error| LlmError::Cache(format!("{}: {e}", dir.display()));
                let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
                let body = serde_json::to_vec_pretty(&entry).expect("entry serializes");
                tmp.write_all(&body).map_err(err)?;
                tmp.persist(Self::file(dir, key))
                    .map_err(|e| err(e.error))?;
                Ok(())
            }
            ResponseCache::Memory(m) => {
                m.lock().unwrap().insert(key.to_string(), entry);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ResponseCache::Dir(dir) => std::fs::read_dir(dir)
                .map(|it| {
                    it.filter_map(Result::ok)
                        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                        .count()
                })
                .unwrap_or(0),
            ResponseCache::Memory(m) => m.lock().unwrap().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
