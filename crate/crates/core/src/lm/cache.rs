//! Append-only content-addressed response store.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{CompletionResponse, LmError};

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Responses stored at `<dir>/<first two hex chars>/<digest>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, LmError> {
        fs::create_dir_all(dir).map_err(|e| LmError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
        })
    }

    /// A cache that stores nothing.
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let prefix = key.get(..2).unwrap_or("00");
        Some(dir.join(prefix).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Result<Option<CompletionResponse>, LmError> {
        let Some(path) = self.path_for(key) else {
            return Ok(None);
        };
        match fs::read_to_string(&path) {
            Ok(raw) => serde_json::from_str(&raw)
                .map(Some)
                .map_err(|e| LmError::Cache(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(LmError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    /// Write via a temporary file and rename, so concurrent readers never
    /// observe a partial entry. An existing entry is left untouched.
    pub fn put(&self, key: &str, response: &CompletionResponse) -> Result<(), LmError> {
        let Some(path) = self.path_for(key) else {
            return Ok(());
        };
        if path.exists() {
            return Ok(());
        }
        let parent = path.parent().expect("cache entries live in a prefix directory");
        let io = |e: std::io::Error| LmError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(parent).map_err(io)?;
        let body = serde_json::to_string(response).map_err(|e| LmError::Cache(e.to_string()))?;
        let temp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        let mut file = fs::File::create(&temp).map_err(io)?;
        file.write_all(body.as_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        fs::rename(&temp, &path).map_err(io)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        let Some(dir) = &self.dir else { return 0 };
        let Ok(prefixes) = fs::read_dir(dir) else { return 0 };
        prefixes
            .flatten()
            .filter_map(|p| fs::read_dir(p.path()).ok())
            .flat_map(|entries| entries.flatten())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
