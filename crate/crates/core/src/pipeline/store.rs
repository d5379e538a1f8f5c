use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::binfmt::write_atomic;
use crate::gateway::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory of a run. Paths are relative to its root.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
        let path = self.path(rel);
        write_file(&path, bytes)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf, PipelineError> {
        self.write_bytes(rel, &json_bytes(value))
    }

    /// Rewrites `manifest.json` from the current contents of the run
    /// directory.
    pub fn seal(&self) -> Result<BTreeMap<String, String>, PipelineError> {
        let artifacts = artifact_manifest(&self.root)?;
        write_file(
            &self.root.join(MANIFEST_FILE),
            &json_bytes(&Manifest {
                artifacts: artifacts.clone(),
            }),
        )?;
        Ok(artifacts)
    }
}

#[derive(Serialize)]
struct Manifest {
    artifacts: BTreeMap<String, String>,
}

/// sha256 of every file under `root` (except the manifest itself), keyed by
/// `/`-separated relative path.
pub fn artifact_manifest(root: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| io_error(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| io_error(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if rel == MANIFEST_FILE || rel.ends_with(".tmp") {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| io_error(&path, e))?;
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(out)
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::data("io", format!("{}: {e}", path.display()))
}

pub(crate) fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    write_atomic(path, bytes).map_err(|e| io_error(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::data("io", format!("{}: {e}", path.display())))
}

/// A cached value together with the digest of the inputs it came from.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Stamped<T> {
    pub stamp: String,
    pub value: T,
}

/// The cached value at `path` if its stamp equals `stamp`.
pub(crate) fn load_fresh<T: DeserializeOwned>(path: &Path, stamp: &str) -> Option<T> {
    let bytes = std::fs::read(path).ok()?;
    let s: Stamped<T> = serde_json::from_slice(&bytes).ok()?;
    (s.stamp == stamp).then_some(s.value)
}

pub(crate) fn store_stamped<T: Serialize>(
    path: &Path,
    stamp: &str,
    value: &T,
) -> Result<(), PipelineError> {
    write_file(
        path,
        &json_bytes(&Stamped {
            stamp: stamp.to_string(),
            value,
        }),
    )
}

/// Digest of a sequence of labelled parts.
pub(crate) fn digest(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{1e}").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_nested_files_relative() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        run.write_bytes("a/b.txt", b"x").unwrap();
        run.write_json("c.json", &vec![1, 2]).unwrap();
        let m = run.seal().unwrap();
        assert_eq!(m.keys().collect::<Vec<_>>(), vec!["a/b.txt", "c.json"]);
        assert_eq!(m["a/b.txt"], sha256_hex(b"x"));
        assert_eq!(run.seal().unwrap(), m);
    }

    #[test]
    fn stale_stamp_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        store_stamped(&p, "one", &5u32).unwrap();
        assert_eq!(load_fresh::<u32>(&p, "one"), Some(5));
        assert_eq!(load_fresh::<u32>(&p, "two"), None);
    }
}
