use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let mut f = fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = f.read(&mut buf).map_err(|e| CliError::io(path.display(), e))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(Self { path: path.to_path_buf(), bytes, sha256: hex::encode(h.finalize()) })
    }
}

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub command: String,
    /// Arguments after the program name; `replay` runs these again.
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    /// Fully resolved settings after merging flags, config file and defaults.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Validation(format!("unsupported manifest format {}", m.format)));
        }
        Ok(m)
    }
}

/// Collects what a command read and wrote while it runs.
pub struct Recorder {
    command: String,
    argv: Vec<String>,
    started_at: DateTime<Utc>,
    clock: Instant,
    pub seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            started_at: Utc::now(),
            clock: Instant::now(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, v: u64) {
        self.seeds.insert(name.to_string(), v);
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn finish(self, config: &impl Serialize, path: &Path) -> CliResult<RunManifest> {
        let digest = |ps: &[PathBuf]| ps.iter().map(|p| FileDigest::of(p)).collect::<CliResult<Vec<_>>>();
        let manifest = RunManifest {
            format: MANIFEST_FORMAT,
            command: self.command,
            argv: self.argv,
            cwd: std::env::current_dir().map_err(|e| CliError::io("current directory", e))?,
            config: serde_json::to_value(config).map_err(|e| CliError::Internal(e.to_string()))?,
            seeds: self.seeds,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            wall_time_s: self.clock.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        crate::write_file(path, text.as_bytes())?;
        Ok(manifest)
    }
}

/// `out/manifest.json` for directory outputs, `file.manifest.json` otherwise.
pub fn default_path(primary: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        primary.join("manifest.json")
    } else {
        with_suffix(primary, ".manifest.json")
    }
}

/// `path` with `suffix` appended to its file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
