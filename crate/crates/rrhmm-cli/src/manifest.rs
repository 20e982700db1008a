//! Run manifests: the resolved arguments and provenance of every output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::CliResult;

pub struct Manifest {
    subcommand: &'static str,
    argv: Vec<String>,
    args: Map<String, Value>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
}

impl Manifest {
    pub fn new(subcommand: &'static str, argv: &[String]) -> Self {
        Self {
            subcommand,
            argv: argv.to_vec(),
            args: Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Write the manifest as `<output>.manifest.json` (or `manifest.json`
    /// inside a directory output).
    pub fn write_for(&self, primary_output: &Path) -> CliResult {
        let path = manifest_path(primary_output);
        let body = json!({
            "subcommand": self.subcommand,
            "argv": self.argv,
            "args": self.args,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_secs": self.started.elapsed().as_secs_f64(),
            "version": env!("CARGO_PKG_VERSION"),
        });
        std::fs::write(
            path,
            serde_json::to_string_pretty(&body).expect("static shape"),
        )?;
        Ok(())
    }
}

pub fn manifest_path(primary_output: &Path) -> PathBuf {
    if primary_output.is_dir() {
        primary_output.join("manifest.json")
    } else {
        let mut name = primary_output
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".to_string());
        name.push_str(".manifest.json");
        primary_output.with_file_name(name)
    }
}
