use std::fs;
use std::path::{Path, PathBuf};

use super::TokenLogProbs;
use crate::error::{PirError, Result};

/// Content-addressed on-disk score cache. One JSON file per key; writes
/// go through a temp file and rename, so concurrent writers of the same
/// key land identical content. No eviction.
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self { dir: dir.as_ref().to_path_buf() })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<TokenLogProbs>> {
        let path = self.path(key);
        match fs::read_to_string(&path) {
            Ok(body) => {
                let lp = serde_json::from_str(&body).map_err(|e| {
                    PirError::Protocol(format!("corrupt cache entry {}: {e}", path.display()))
                })?;
                Ok(Some(lp))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, key: &str, value: &TokenLogProbs) -> Result<()> {
        let body = serde_json::to_string(value).expect("serializable");
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, body)?;
        fs::rename(&tmp, self.path(key))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path()).unwrap();
        assert!(cache.get("k").unwrap().is_none());
        let lp = TokenLogProbs { tokens: vec!["a ".into(), "b".into()], logprobs: vec![-1.0, -0.5] };
        cache.put("k", &lp).unwrap();
        assert_eq!(cache.get("k").unwrap().unwrap(), lp);
    }
}
