use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance for one output directory; later commands writing to the
/// same directory append an entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub corpus: Option<String>,
    pub seeds: Vec<u64>,
    pub stages: Vec<StageTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Collects stage wall-clock times for a command.
pub struct Recorder {
    entry: ManifestEntry,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, config_path: Option<&Path>, corpus: Option<&Path>) -> Self {
        Recorder {
            entry: ManifestEntry {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config_path: config_path.map(|p| p.display().to_string()),
                corpus: corpus.map(|p| p.display().to_string()),
                seeds: Vec::new(),
                stages: Vec::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.entry.seeds.push(seed);
    }

    /// Runs `f` and records its duration under `stage`.
    pub fn stage<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.entry.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    /// Appends this command to the manifest in `dir`.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.entry.stages.push(StageTiming {
            stage: "total".into(),
            seconds: self.started.elapsed().as_secs_f64(),
        });
        let path = dir.join(MANIFEST_FILE);
        let mut manifest = if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            RunManifest {
                run_id: format!(
                    "{}-{}",
                    self.entry.command,
                    self.entry.seeds.first().map_or("noseed".into(), |s| format!("{s:016x}"))
                ),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                entries: Vec::new(),
            }
        };
        manifest.entries.push(self.entry);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
