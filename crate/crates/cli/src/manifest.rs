//! Per-output-directory run manifests with content hashes.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rationale_audit::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to sha256 (files) or to a digest of all contained files.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the directory) to sha256.
    pub outputs: BTreeMap<String, String>,
    /// Tagger, lexical database and proposer identifiers.
    pub versions: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn start(command: &str, arguments: Vec<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            arguments,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            versions: BTreeMap::new(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
            elapsed_seconds: 0.0,
        }
    }

    /// Checks `path` against the manifest next to it (if any) and records
    /// its hash as an input.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        verify(path)?;
        let digest = if path.is_dir() { hash_dir(path)? } else { hash_file(path)? };
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn version(&mut self, name: &str, value: impl Into<String>) {
        self.versions.insert(name.to_string(), value.into());
    }

    /// Hashes everything in `dir` and writes `dir/manifest.json`.
    pub fn finish(mut self, dir: &Path, started: std::time::Instant) -> Result<()> {
        self.outputs = list_files(dir)?
            .into_iter()
            .map(|(rel, path)| Ok((rel, hash_file(&path)?)))
            .collect::<Result<_>>()?;
        self.finished = chrono::Utc::now().to_rfc3339();
        self.elapsed_seconds = started.elapsed().as_secs_f64();
        let path = dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Files under `dir` (recursively, manifest excluded), keyed by relative
/// path with `/` separators, sorted.
fn list_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if rel != MANIFEST {
                    out.insert(rel, path);
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn hash_dir(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for (rel, path) in list_files(dir)? {
        hasher.update(format!("{rel}\t{}\n", hash_file(&path)?));
    }
    Ok(hex::encode(hasher.finalize()))
}

/// If `path` (a directory) or its parent (for a file) holds a manifest,
/// every file the manifest declares under `path` must still hash the same.
pub fn verify(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::load(path, 0, "input does not exist"));
    }
    let (dir, only) = if path.is_dir() {
        (path.to_path_buf(), None)
    } else {
        let parent = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let name = path.file_name().map(|n| n.to_string_lossy().to_string());
        (parent, name)
    };
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Ok(());
    }
    let manifest = RunManifest::read(&manifest_path)?;
    let mut bad = Vec::new();
    for (rel, declared) in &manifest.outputs {
        if only.as_ref().is_some_and(|o| o != rel) {
            continue;
        }
        let file = dir.join(rel);
        match hash_file(&file) {
            Ok(actual) if &actual == declared => {}
            Ok(_) => bad.push(format!("{rel} (modified)")),
            Err(_) => bad.push(format!("{rel} (missing)")),
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Integrity(format!(
            "{} does not match {}: {}",
            dir.display(),
            manifest_path.display(),
            bad.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("a.txt"), "one").unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "two").unwrap();
        let m = RunManifest::start("test", vec![], serde_json::Value::Null, None);
        m.finish(dir.path(), std::time::Instant::now()).unwrap();
        let m = RunManifest::read(&dir.path().join(MANIFEST)).unwrap();
        assert_eq!(m.outputs.keys().collect::<Vec<_>>(), ["a.txt", "sub/b.txt"]);
        verify(dir.path()).unwrap();
        verify(&dir.path().join("a.txt")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "changed").unwrap();
        let err = verify(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)) && err.to_string().contains("sub/b.txt"), "{err}");
        verify(&dir.path().join("a.txt")).unwrap();
        assert!(verify(&dir.path().join("nope")).is_err());
    }

    #[test]
    fn dir_hash_ignores_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "one").unwrap();
        let before = hash_dir(dir.path()).unwrap();
        std::fs::write(dir.path().join(MANIFEST), "{}").unwrap();
        assert_eq!(hash_dir(dir.path()).unwrap(), before);
    }
}
