//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use flexdesign::Instance;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub manifest_version: u32,
    pub run_id: String,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub instance_hash: Option<String>,
    /// Departures from the reference protocol (smaller seed counts and the like).
    pub deviations: Vec<String>,
    pub wallclock_s: f64,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn instance_hash(instance: &Instance) -> String {
    sha256_hex(instance.to_json().as_bytes())
}

pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    start: Instant,
    fixed_clock: bool,
}

impl Run {
    /// Creates `<out>/<command>-<id>`, where the id hashes everything that determines the results.
    pub fn start(
        out: &Path,
        command: &str,
        config: Value,
        seeds: BTreeMap<String, u64>,
        instance: Option<&Instance>,
        fixed_clock: bool,
    ) -> Result<Run> {
        let instance_hash = instance.map(instance_hash);
        let key = serde_json::json!({
            "command": command,
            "config": config,
            "seeds": seeds,
            "instance_hash": instance_hash,
        });
        let run_id = sha256_hex(key.to_string().as_bytes())[..12].to_string();
        let dir = out.join(format!("{command}-{run_id}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Run {
            dir,
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                manifest_version: MANIFEST_VERSION,
                run_id,
                config,
                seeds,
                instance_hash,
                deviations: Vec::new(),
                wallclock_s: 0.0,
                outputs: Vec::new(),
            },
            start: Instant::now(),
            fixed_clock,
        })
    }

    pub fn fixed_clock(&self) -> bool {
        self.fixed_clock
    }

    pub fn deviation(&mut self, note: impl Into<String>) {
        self.manifest.deviations.push(note.into());
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.into());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    /// Writes a JSON object that points back at the manifest.
    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut value = serde_json::to_value(value)?;
        if let Value::Object(map) = &mut value {
            map.insert("manifest".into(), Value::String(MANIFEST.into()));
        }
        self.write(name, serde_json::to_string_pretty(&value)? + "\n")
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.wallclock_s = if self.fixed_clock {
            0.0
        } else {
            self.start.elapsed().as_secs_f64()
        };
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(self.dir)
    }
}
