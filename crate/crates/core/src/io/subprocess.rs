//! JSON-lines protocol for model clients that run as external processes.
//!
//! Each call spawns the configured command, writes one request object to its
//! stdin and reads one response object from its stdout.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense_caption::MaskRle;
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::rewards::RetryPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireImage {
    Tensor { shape: Vec<usize>, data: Vec<f64> },
    Path(String),
}

impl From<&LatentImage> for WireImage {
    fn from(img: &LatentImage) -> Self {
        WireImage::Tensor {
            shape: img.shape().to_vec(),
            data: img.data().iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    /// One of `caption`, `encode`, `score`, `tag`, `complete`, `segment`.
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image: Option<WireImage>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub backend: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub latency_ms: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub score_range: Option<[f64; 2]>,
    #[serde(default)]
    pub tags: Option<Vec<String>>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub mask: Option<MaskRle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubprocessClient {
    pub id: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl SubprocessClient {
    pub fn new(id: impl Into<String>, program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            id: id.into(),
            program: program.into(),
            args,
            retry: RetryPolicy::default(),
        }
    }

    fn client_error(&self, message: impl Into<String>) -> Error {
        Error::Client {
            client: self.id.clone(),
            attempts: 1,
            message: message.into(),
        }
    }

    fn call_once(&self, request: &str) -> Result<WireResponse> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.client_error(format!("cannot spawn `{}`: {e}", self.program)))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload = request.to_string();
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(payload.as_bytes());
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            stdout.read_to_string(&mut buf).map(|_| buf)
        });

        let deadline = Instant::now() + self.retry.timeout();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(
                    self.client_error(format!("timed out after {} ms", self.retry.timeout_ms))
                );
            }
            std::thread::sleep(std::time::Duration::from_millis(2));
        };
        let _ = writer.join();
        let out = reader
            .join()
            .map_err(|_| self.client_error("stdout reader panicked"))??;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut e) = child.stderr.take() {
                let _ = e.read_to_string(&mut err);
            }
            return Err(self.client_error(format!("exited with {status}: {}", err.trim())));
        }
        let line = out
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| self.client_error("empty response"))?;
        let resp: WireResponse = serde_json::from_str(line)
            .map_err(|e| self.client_error(format!("malformed response: {e}")))?;
        if let Some(msg) = resp.error {
            return Err(self.client_error(msg));
        }
        Ok(resp)
    }

    /// Sends `request`, retrying client failures per the retry policy.
    pub fn call(&self, request: &WireRequest) -> Result<WireResponse> {
        let mut line = serde_json::to_string(request).expect("request serialises");
        line.push('\n');
        self.retry.run(&self.id, || self.call_once(&line))
    }
}
