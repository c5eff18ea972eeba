//! Per-run output directories and the append-only run log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub prompts: Vec<String>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub rewards: Vec<RewardEntry>,
    pub annotations_digest: Option<String>,
    pub run_dir: Option<String>,
    pub exit_code: i32,
    pub error: Option<String>,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_step_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_ms: Option<f64>,
}

impl RunRecord {
    pub const LOG: &'static str = "runs.jsonl";

    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: String::new(),
            seed,
            prompts: Vec::new(),
            artifacts: Vec::new(),
            rewards: Vec::new(),
            annotations_digest: None,
            run_dir: None,
            exit_code: 0,
            error: None,
            wall_ms: 0.0,
            train_step_ms: None,
            eval_ms: None,
        }
    }

    /// Appends one JSON line with a single write.
    pub fn append(&self, out_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let mut line = serde_json::to_string(self).expect("serialisable record");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_dir.join(Self::LOG))?;
        f.write_all(line.as_bytes())
    }
}

/// `<out-dir>/<config hash>-<unix ms>/`, plus the record being built.
pub struct RunDir {
    pub out_dir: PathBuf,
    pub path: PathBuf,
    pub record: RunRecord,
    started: Instant,
}

impl RunDir {
    pub fn create(
        out_dir: &Path,
        config_hash: &str,
        mut record: RunRecord,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        let mut ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        let short = &config_hash[..config_hash.len().min(12)];
        let path = loop {
            let candidate = out_dir.join(format!("{short}-{ms}"));
            match std::fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => ms += 1,
                Err(e) => return Err(e),
            }
        };
        record.config_hash = config_hash.to_string();
        record.run_dir = Some(relative(out_dir, &path));
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            path,
            record,
            started: Instant::now(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Notes an artifact written under the run directory.
    pub fn artifact(&mut self, path: &Path) {
        let rel = relative(&self.out_dir, path);
        self.record.artifacts.push(rel);
    }

    pub fn finish(mut self) -> RunRecord {
        self.record.wall_ms = self.started.elapsed().as_secs_f64() * 1e3;
        self.record
    }
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}
