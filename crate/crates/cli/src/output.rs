//! Output directory handling and the per-run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliResult;

/// Collects every file written by a run so the manifest can list them.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    prefix: String,
    files: Vec<String>,
    notes: BTreeMap<String, Value>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), prefix: String::new(), files: Vec::new(), notes: BTreeMap::new() })
    }

    /// Runs `f` with every written name placed under `dir/`.
    pub fn within<R>(&mut self, dir: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{dir}/");
        let r = f(self);
        self.prefix = saved;
        r
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let name = format!("{}{name}", self.prefix);
        let path = self.root.join(&name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        self.files.push(name);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    /// Adds a key to the manifest, e.g. an initial condition the run assumed.
    pub fn note(&mut self, key: &str, value: Value) {
        self.notes.insert(format!("{}{key}", self.prefix), value);
    }

    /// Writes `manifest.json`: the only file carrying a timestamp.
    pub fn finish(mut self, args: &[String], model: &str, params: BTreeMap<String, f64>) -> CliResult<()> {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.files.sort();
        let manifest = json!({
            "timestamp_unix": stamp,
            "args": args,
            "model": model,
            "params": params,
            "parallel": pacemaker_core::par::is_parallel(),
            "files": self.files,
            "notes": self.notes,
        });
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(self.root.join("manifest.json"), s)?;
        Ok(())
    }
}
