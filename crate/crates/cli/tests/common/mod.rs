#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
    pub run_dir: Option<PathBuf>,
}

pub fn semalign(out_dir: &Path, args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_semalign"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn semalign");
    let run_dir = last_record(out_dir).and_then(|r| r["run_dir"].as_str().map(|d| out_dir.join(d)));
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        run_dir,
    }
}

pub fn records(out_dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(out_dir.join("runs.jsonl"))
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).expect("record is JSON"))
        .collect()
}

pub fn last_record(out_dir: &Path) -> Option<serde_json::Value> {
    records(out_dir).pop()
}

pub fn ok(o: &Outcome) -> PathBuf {
    assert_eq!(o.code, 0, "stdout:\n{}\nstderr:\n{}", o.stdout, o.stderr);
    o.run_dir.clone().expect("run dir")
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub const TOY_CONFIG: &str = r#"
[refl]
lambda = 1.0
learning_rate = 1e-4
batch_size = 2
pretrain_batch_size = 1
max_iterations = 6
validation_interval = 3

[dataset]
prompts = [
    "a red book and a yellow pen",
    "a cat on a mat",
    "a blue car next to a tree",
    "a green apple",
    "two dogs in a park",
]
"#;

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}
