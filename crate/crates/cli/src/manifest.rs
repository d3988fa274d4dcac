//! Output directories with a `manifest.json` of SHA-256 content hashes.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Collects files written under one directory. Writes are serialized through
/// this value, and `finish` records every file in the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len(),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Writes `manifest.json` with `meta` merged in next to the file list.
    pub fn finish(mut self, meta: Value) -> Result<Vec<FileEntry>> {
        let files = std::mem::take(&mut self.files);
        let mut doc = serde_json::Map::new();
        doc.insert("files".into(), serde_json::to_value(&files)?);
        if let Value::Object(m) = meta {
            doc.extend(m);
        }
        let mut text = serde_json::to_vec_pretty(&Value::Object(doc))?;
        text.push(b'\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(files)
    }
}
