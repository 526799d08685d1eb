//! Provenance sidecars written next to every output artifact.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::json::{write_json, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub schema_version: u32,
    pub tool_version: String,
    /// Seconds since the Unix epoch when the run started.
    pub started_at: u64,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// `out.json` becomes `out.json.manifest.json`.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Collects inputs during a run; [`Recorder::finish`] writes one manifest
/// per output.
#[derive(Debug)]
pub struct Recorder {
    command_line: Vec<String>,
    inputs: Vec<InputDigest>,
    seed: Option<u64>,
    started_at: u64,
    clock: Instant,
}

impl Recorder {
    pub fn start(command_line: Vec<String>) -> Self {
        let started_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Recorder {
            command_line,
            inputs: Vec::new(),
            seed: None,
            started_at,
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn input_opt(&mut self, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => self.input(p),
            None => Ok(()),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn manifest(&self, outputs: &[&Path]) -> RunManifest {
        RunManifest {
            command_line: self.command_line.clone(),
            inputs: self.inputs.clone(),
            seed: self.seed,
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            wall_time_seconds: self.clock.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    pub fn finish(&self, outputs: &[&Path]) -> Result<()> {
        let manifest = self.manifest(outputs);
        for out in outputs {
            write_json(&manifest, &sidecar_path(out))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sidecar_written_per_output() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, ",a\ns,1\n").unwrap();
        let out = dir.path().join("out.json");
        std::fs::write(&out, "{}").unwrap();
        let mut rec = Recorder::start(vec!["agpca".into(), "fit".into()]);
        rec.input(&input).unwrap();
        rec.seed(7);
        rec.finish(&[&out]).unwrap();
        let text = std::fs::read_to_string(sidecar_path(&out)).unwrap();
        let m: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m.seed, Some(7));
        assert_eq!(m.inputs.len(), 1);
        assert_eq!(m.schema_version, SCHEMA_VERSION);
        assert!(m.wall_time_seconds >= 0.0);
    }
}
