use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::RwLock;

use serde_json::Value;

use super::ProviderError;
use crate::util::sha256_hex;

/// Hash of the canonicalized request: provider id, operation, normalized
/// parameters and the prompt bytes.
pub fn cache_key(provider: &str, operation: &str, params: &Value, prompt: &str) -> String {
    // serde_json::Value objects are BTreeMap-backed, so key order is canonical.
    let canonical = serde_json::json!({
        "provider": provider,
        "operation": operation,
        "params": params,
    });
    let mut bytes = canonical.to_string().into_bytes();
    bytes.push(0);
    bytes.extend_from_slice(prompt.as_bytes());
    sha256_hex(&bytes)
}

/// Memory cache with an optional on-disk mirror (one file per request hash
/// holding the raw response body).
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, ProviderError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| {
                ProviderError::Config(format!("cannot create cache dir {}: {e}", d.display()))
            })?;
        }
        Ok(Self {
            dir,
            memory: RwLock::new(HashMap::new()),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = self.memory.read().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let path = self.dir.as_ref()?.join(key);
        let body = fs::read_to_string(path).ok()?;
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.to_string(), body.clone());
        Some(body)
    }

    pub fn put(&self, key: &str, body: &str) -> Result<(), ProviderError> {
        if let Some(dir) = &self.dir {
            // write-then-rename so concurrent readers never observe a torn file
            let tmp = dir.join(format!(".{key}.{:?}.tmp", std::thread::current().id()));
            let write = || -> std::io::Result<()> {
                let mut f = fs::File::create(&tmp)?;
                f.write_all(body.as_bytes())?;
                f.sync_all()?;
                fs::rename(&tmp, dir.join(key))
            };
            write().map_err(|e| ProviderError::Config(format!("cache write failed: {e}")))?;
        }
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.to_string(), body.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_is_insensitive_to_param_insertion_order() {
        let mut a = serde_json::Map::new();
        a.insert("x".into(), 1.into());
        a.insert("y".into(), 2.into());
        let mut b = serde_json::Map::new();
        b.insert("y".into(), 2.into());
        b.insert("x".into(), 1.into());
        assert_eq!(
            cache_key("p", "op", &Value::Object(a), "hi"),
            cache_key("p", "op", &Value::Object(b), "hi")
        );
    }

    #[test]
    fn key_separates_provider_operation_and_prompt() {
        let p = Value::Null;
        let base = cache_key("p", "op", &p, "hi");
        assert_ne!(base, cache_key("q", "op", &p, "hi"));
        assert_ne!(base, cache_key("p", "op2", &p, "hi"));
        assert_ne!(base, cache_key("p", "op", &p, "hi!"));
    }

    #[test]
    fn disk_cache_survives_a_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let c1 = ResponseCache::new(Some(dir.path().to_path_buf())).unwrap();
        c1.put("abc", "body ✓").unwrap();
        let c2 = ResponseCache::new(Some(dir.path().to_path_buf())).unwrap();
        assert_eq!(c2.get("abc").as_deref(), Some("body ✓"));
        assert_eq!(
            fs::read_to_string(dir.path().join("abc")).unwrap(),
            "body ✓"
        );
    }
}
