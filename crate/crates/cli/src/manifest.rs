use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Record of one invocation: what ran, with which settings and seeds, what
/// it wrote and how long each stage took.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<PathBuf>,
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn timing(&mut self, stage: &str, seconds: f64) {
        self.timings.insert(stage.to_string(), seconds);
    }

    /// Writes the manifest as `<stem>.manifest.json` next to `primary`, or as
    /// `manifest.json` inside it when `primary` is a directory.
    pub fn write_beside(mut self, primary: &Path) -> Result<PathBuf> {
        if let Some(t) = self.started {
            self.timings.insert("total".into(), t.elapsed().as_secs_f64());
        }
        let path = if primary.is_dir() {
            primary.join("manifest.json")
        } else {
            let stem = primary.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            primary.with_file_name(format!("{stem}.manifest.json"))
        };
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
