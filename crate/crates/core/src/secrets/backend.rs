//! Key-value backends. Values arrive already sealed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{SecretsError, SecretsResult};

pub trait SecretsBackend: Send + Sync {
    fn get(&self, key: &str) -> SecretsResult<Option<Vec<u8>>>;
    fn put(&self, key: &str, value: Vec<u8>) -> SecretsResult<()>;
    /// Keys starting with `prefix`, in lexicographic order.
    fn list(&self, prefix: &str) -> SecretsResult<Vec<String>>;
    fn delete(&self, key: &str) -> SecretsResult<bool>;
    fn ping(&self) -> SecretsResult<()>;
}

#[derive(Default)]
pub struct MemoryBackend {
    map: RwLock<BTreeMap<String, Vec<u8>>>,
    down: AtomicBool,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Simulates the backend going away.
    pub fn set_available(&self, up: bool) {
        self.down.store(!up, Ordering::SeqCst);
    }

    fn check(&self) -> SecretsResult<()> {
        if self.down.load(Ordering::SeqCst) {
            Err(SecretsError::Unavailable("memory backend marked down".into()))
        } else {
            Ok(())
        }
    }

    /// Raw access for tamper tests.
    pub fn raw_mut<R>(&self, f: impl FnOnce(&mut BTreeMap<String, Vec<u8>>) -> R) -> R {
        f(&mut self.map.write())
    }
}

impl SecretsBackend for MemoryBackend {
    fn get(&self, key: &str) -> SecretsResult<Option<Vec<u8>>> {
        self.check()?;
        Ok(self.map.read().get(key).cloned())
    }

    fn put(&self, key: &str, value: Vec<u8>) -> SecretsResult<()> {
        self.check()?;
        self.map.write().insert(key.to_string(), value);
        Ok(())
    }

    fn list(&self, prefix: &str) -> SecretsResult<Vec<String>> {
        self.check()?;
        Ok(self
            .map
            .read()
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect())
    }

    fn delete(&self, key: &str) -> SecretsResult<bool> {
        self.check()?;
        Ok(self.map.write().remove(key).is_some())
    }

    fn ping(&self) -> SecretsResult<()> {
        self.check()
    }
}

#[derive(Serialize, Deserialize, Default)]
struct FileImage {
    entries: BTreeMap<String, String>,
}

/// A single JSON document on disk, rewritten atomically on every mutation.
pub struct FileBackend {
    path: PathBuf,
    map: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl FileBackend {
    pub fn open(path: impl AsRef<Path>) -> SecretsResult<Self> {
        let path = path.as_ref().to_path_buf();
        let map = match fs::read(&path) {
            Ok(bytes) => {
                let image: FileImage = serde_json::from_slice(&bytes)
                    .map_err(|e| SecretsError::Unavailable(format!("corrupt store {}: {e}", path.display())))?;
                let mut map = BTreeMap::new();
                for (k, v) in image.entries {
                    let raw = base64::Engine::decode(&base64::engine::general_purpose::STANDARD, v)
                        .map_err(|_| SecretsError::Unavailable(format!("corrupt entry {k}")))?;
                    map.insert(k, raw);
                }
                map
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(SecretsError::Unavailable(format!("{}: {e}", path.display()))),
        };
        Ok(FileBackend { path, map: Mutex::new(map) })
    }

    fn persist(&self, map: &BTreeMap<String, Vec<u8>>) -> SecretsResult<()> {
        let image = FileImage {
            entries: map
                .iter()
                .map(|(k, v)| (k.clone(), base64::Engine::encode(&base64::engine::general_purpose::STANDARD, v)))
                .collect(),
        };
        let bytes = serde_json::to_vec(&image).expect("image serializes");
        let tmp = self.path.with_extension("tmp");
        let io = |e: std::io::Error| SecretsError::Unavailable(format!("{}: {e}", self.path.display()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, &self.path).map_err(io)
    }
}

impl SecretsBackend for FileBackend {
    fn get(&self, key: &str) -> SecretsResult<Option<Vec<u8>>> {
        Ok(self.map.lock().get(key).cloned())
    }

    fn put(&self, key: &str, value: Vec<u8>) -> SecretsResult<()> {
        let mut map = self.map.lock();
        let prev = map.insert(key.to_string(), value);
        if let Err(e) = self.persist(&map) {
            match prev {
                Some(p) => map.insert(key.to_string(), p),
                None => map.remove(key),
            };
            return Err(e);
        }
        Ok(())
    }

    fn list(&self, prefix: &str) -> SecretsResult<Vec<String>> {
        Ok(self.map.lock().keys().filter(|k| k.starts_with(prefix)).cloned().collect())
    }

    fn delete(&self, key: &str) -> SecretsResult<bool> {
        let mut map = self.map.lock();
        let Some(prev) = map.remove(key) else {
            return Ok(false);
        };
        if let Err(e) = self.persist(&map) {
            map.insert(key.to_string(), prev);
            return Err(e);
        }
        Ok(true)
    }

    fn ping(&self) -> SecretsResult<()> {
        match self.path.parent() {
            Some(dir) if !dir.as_os_str().is_empty() && !dir.exists() => {
                Err(SecretsError::Unavailable(format!("{} does not exist", dir.display())))
            }
            _ => Ok(()),
        }
    }
}
