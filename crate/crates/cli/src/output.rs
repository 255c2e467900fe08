use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub path: String,
    pub kind: &'static str,
    pub bytes: usize,
    pub sha256: String,
}

/// Output directory of one run. Files are written whole from memory and
/// recorded in the order they are produced.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    /// Opens `root`, creating it if needed. Files listed by a previous
    /// manifest are removed; any other file makes the directory unusable,
    /// since the new manifest could not account for it.
    pub fn prepare(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let manifest = root.join(MANIFEST);
        if manifest.exists() {
            let text = fs::read_to_string(&manifest)?;
            let old: Value = serde_json::from_str(&text).context("reading the previous manifest")?;
            for entry in old["artifacts"].as_array().into_iter().flatten() {
                if let Some(p) = entry["path"].as_str() {
                    let full = root.join(p);
                    if full.starts_with(root) && full.is_file() {
                        fs::remove_file(&full)?;
                    }
                }
            }
            fs::remove_file(&manifest)?;
            remove_empty_dirs(root)?;
        }
        let leftover = list_files(root)?;
        if let Some(first) = leftover.first() {
            bail!("output directory {} already holds {first}, which no manifest accounts for", root.display());
        }
        Ok(Self { root: root.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn write(&mut self, rel: &str, kind: &'static str, bytes: Vec<u8>) -> anyhow::Result<()> {
        let full = self.root.join(rel);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&full, &bytes).with_context(|| format!("writing {}", full.display()))?;
        log::info!("wrote {rel} ({} bytes)", bytes.len());
        self.artifacts.push(Artifact { path: rel.to_string(), kind, bytes: bytes.len(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    /// Writes the manifest: one flat record per artifact plus the run header.
    pub fn finish(self, command: &str, config_hash: &str, status: &str) -> anyhow::Result<()> {
        let artifacts: Vec<Value> = self
            .artifacts
            .iter()
            .map(|a| json!({ "path": a.path, "kind": a.kind, "bytes": a.bytes, "sha256": a.sha256 }))
            .collect();
        let manifest = json!({
            "command": command,
            "config_sha256": config_hash,
            "status": status,
            "version": env!("CARGO_PKG_VERSION"),
            "artifacts": artifacts,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(())
    }
}

/// Relative paths of all files below `root`, sorted.
pub fn list_files(root: &Path) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
                out.push(rel);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn remove_empty_dirs(dir: &Path) -> anyhow::Result<bool> {
    let mut empty = true;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() && remove_empty_dirs(&path)? {
            fs::remove_dir(&path)?;
        } else {
            empty = false;
        }
    }
    Ok(empty)
}
