use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// `manifest.json` written into every output directory.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: BTreeMap<&'static str, String>,
    pub rng_seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<&'static str, String>,
    pub timings_secs: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let versions = BTreeMap::from([
            ("lookalike", lookalike::VERSION.to_string()),
            ("lookalike-cli", env!("CARGO_PKG_VERSION").to_string()),
            (
                "model_format",
                format!("{} v{}", lookalike::forest::MODEL_FORMAT, lookalike::forest::MODEL_VERSION),
            ),
        ]);
        Manifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            config: cfg.canonical(),
            rng_seeds: BTreeMap::from([("master".to_string(), cfg.seed)]),
            versions,
            timings_secs: BTreeMap::new(),
            outputs: Vec::new(),
            details: serde_json::Map::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.rng_seeds.insert(name.to_string(), value);
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("manifest values serialize");
        self.details.insert(key.to_string(), v);
    }

    /// Runs `f` and records its wall-clock duration under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_secs.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    pub fn write(&mut self, dir: &Path) -> CliResult<()> {
        self.outputs.sort();
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(CliError::io(&path))
    }
}
