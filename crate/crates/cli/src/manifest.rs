use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance block embedded in every output.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub wall_clock_ms: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: String, args: Vec<String>, threads: usize) -> Self {
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        ManifestBuilder {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                subcommand,
                args,
                seed: None,
                threads,
                inputs: BTreeMap::new(),
                started_unix_ms,
                wall_clock_ms: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    /// Records the digest of an input file. Unreadable files are left to the
    /// parser to report.
    pub fn input(&mut self, path: &Path) {
        if let Ok(bytes) = fs::read(path) {
            let digest = Sha256::digest(&bytes);
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            self.manifest.inputs.insert(path.display().to_string(), hex);
        }
    }

    pub fn finish(&self) -> RunManifest {
        let mut m = self.manifest.clone();
        m.wall_clock_ms = self.started.elapsed().as_secs_f64() * 1e3;
        m
    }
}
