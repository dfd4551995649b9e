//! Append-only run manifests.

use crate::error::Result;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Collects everything needed to reproduce one command invocation, plus
/// wall-clock timings per stage. Each run appends exactly one record to
/// `manifest.log` in the output directory.
#[derive(Debug)]
pub struct RunManifest {
    command: String,
    entries: Vec<(String, String)>,
    timings: Vec<(String, f64)>,
    started: Instant,
    stage_started: Instant,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let now = Instant::now();
        Self {
            command: command.to_string(),
            entries: Vec::new(),
            timings: Vec::new(),
            started: now,
            stage_started: now,
        }
    }

    pub fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Close the current stage and start timing the next one.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.timings
            .push((name.to_string(), now.duration_since(self.stage_started).as_secs_f64()));
        self.stage_started = now;
    }

    pub fn append_to(mut self, out_dir: &Path) -> Result<()> {
        let total = self.started.elapsed().as_secs_f64();
        std::fs::create_dir_all(out_dir)?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_dir.join("manifest.log"))?;
        writeln!(file, "[run]")?;
        writeln!(file, "command = {}", self.command)?;
        writeln!(file, "version = {}", env!("CARGO_PKG_VERSION"))?;
        self.entries.sort();
        for (k, v) in &self.entries {
            writeln!(file, "{} = {}", k, v)?;
        }
        for (name, secs) in &self.timings {
            writeln!(file, "elapsed.{} = {:.3}s", name, secs)?;
        }
        writeln!(file, "elapsed.total = {:.3}s", total)?;
        writeln!(file, "[end]")?;
        Ok(())
    }
}
