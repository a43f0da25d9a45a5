use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{sha256_hex, write_atomic};

use super::PromptMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub model_id: String,
    pub mode: PromptMode,
    pub instruction_version: String,
    pub doc_id: String,
    pub prompt_sha256: String,
    pub response: String,
}

/// Content-addressed store of raw model responses, one JSON file per key
/// under `<dir>/<first two hex chars>/<key>.json`. Writes go through a
/// temp file and rename, so concurrent readers never see partial entries.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(
        model_id: &str,
        mode: PromptMode,
        instruction_version: &str,
        doc_id: &str,
        prompt: &str,
    ) -> String {
        let mut h = Sha256::new();
        for part in [
            model_id,
            mode.id(),
            instruction_version,
            doc_id,
            &sha256_hex(prompt.as_bytes()),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, key: &str) -> Option<CachedResponse> {
        let bytes = fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, key: &str, entry: &CachedResponse) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(entry).map_err(io::Error::other)?;
        write_atomic(&self.path(key), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry() -> CachedResponse {
        CachedResponse {
            model_id: "m".into(),
            mode: PromptMode::ZeroShot,
            instruction_version: "v1".into(),
            doc_id: "d".into(),
            prompt_sha256: sha256_hex(b"p"),
            response: "r".into(),
        }
    }

    #[test]
    fn put_then_get() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(tmp.path()).unwrap();
        let k = ResponseCache::key("m", PromptMode::ZeroShot, "v1", "d", "p");
        assert!(cache.get(&k).is_none());
        cache.put(&k, &entry()).unwrap();
        assert_eq!(cache.get(&k), Some(entry()));
    }

    #[test]
    fn key_depends_on_every_field() {
        let base = ResponseCache::key("m", PromptMode::ZeroShot, "v1", "d", "p");
        assert_ne!(base, ResponseCache::key("n", PromptMode::ZeroShot, "v1", "d", "p"));
        assert_ne!(base, ResponseCache::key("m", PromptMode::FewShot, "v1", "d", "p"));
        assert_ne!(base, ResponseCache::key("m", PromptMode::ZeroShot, "v2", "d", "p"));
        assert_ne!(base, ResponseCache::key("m", PromptMode::ZeroShot, "v1", "e", "p"));
        assert_ne!(base, ResponseCache::key("m", PromptMode::ZeroShot, "v1", "d", "q"));
        // length prefixes keep field boundaries unambiguous
        assert_ne!(
            ResponseCache::key("ab", PromptMode::ZeroShot, "c", "d", "p"),
            ResponseCache::key("a", PromptMode::ZeroShot, "bc", "d", "p")
        );
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(tmp.path()).unwrap();
        let k = ResponseCache::key("m", PromptMode::ZeroShot, "v1", "d", "p");
        write_atomic(&cache.path(&k), b"{not json").unwrap();
        assert!(cache.get(&k).is_none());
    }
}
