use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::prompt::Prompt;

/// A generated caption `t_g` and the captioner that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub source: String,
}

impl Caption {
    pub fn new(text: impl Into<String>, source: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::protocol("caption", "captioner returned empty text"));
        }
        Ok(Self {
            text,
            source: source.into(),
        })
    }
}

/// Produces a caption for an image. Stub captioners may use the prompt;
/// real ones only see the image.
pub trait CaptionerClient {
    fn id(&self) -> &str;
    fn caption(&self, image: &LatentImage, prompt: &Prompt) -> Result<Caption>;
}

/// Sentence-level text encoder `f_enc`.
pub trait TextEncoderClient {
    /// Model identifier, including the pooling scheme.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerBackend {
    Clip,
    Blip,
    #[serde(rename = "imagereward")]
    ImageReward,
}

impl ScorerBackend {
    pub const ALL: [ScorerBackend; 3] = [Self::Clip, Self::Blip, Self::ImageReward];

    pub fn name(self) -> &'static str {
        match self {
            Self::Clip => "clip",
            Self::Blip => "blip",
            Self::ImageReward => "imagereward",
        }
    }
}

impl fmt::Display for ScorerBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "reward.backend",
                    format!("unknown backend `{s}` (expected clip, blip or imagereward)"),
                )
            })
    }
}

/// Raw image-text score and the range it is reported in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScorerOutput {
    pub score: f64,
    pub range: (f64, f64),
}

pub trait ImageTextScorerClient {
    fn id(&self) -> &str;
    fn backend(&self) -> ScorerBackend;
    fn score(&self, image: &LatentImage, prompt: &Prompt) -> Result<ScorerOutput>;
}

macro_rules! forward_client {
    ($ptr:ty) => {
        impl<T: CaptionerClient + ?Sized> CaptionerClient for $ptr {
            fn id(&self) -> &str {
                (**self).id()
            }
            fn caption(&self, image: &LatentImage, prompt: &Prompt) -> Result<Caption> {
                (**self).caption(image, prompt)
            }
        }

        impl<T: TextEncoderClient + ?Sized> TextEncoderClient for $ptr {
            fn id(&self) -> &str {
                (**self).id()
            }
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn encode(&self, text: &str) -> Result<Vec<f64>> {
                (**self).encode(text)
            }
        }

        impl<T: ImageTextScorerClient + ?Sized> ImageTextScorerClient for $ptr {
            fn id(&self) -> &str {
                (**self).id()
            }
            fn backend(&self) -> ScorerBackend {
                (**self).backend()
            }
            fn score(&self, image: &LatentImage, prompt: &Prompt) -> Result<ScorerOutput> {
                (**self).score(image, prompt)
            }
        }
    };
}

forward_client!(&T);
forward_client!(Box<T>);
forward_client!(std::sync::Arc<T>);

/// Retry and timeout settings for out-of-process clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: 200,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Runs `op` until it succeeds or attempts run out. Only client errors are
    /// retried; the final error carries the attempt count.
    pub fn run<T>(&self, client: &str, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(Error::Client { message, .. }) => {
                    log::warn!("{client}: attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        std::thread::sleep(Duration::from_millis(self.backoff_ms * attempt as u64));
                    }
                }
                Err(other) => return Err(other),
            }
        }
        Err(Error::Client {
            client: client.to_string(),
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn backend_names_roundtrip_and_unknown_is_config_error() {
        for b in ScorerBackend::ALL {
            assert_eq!(b.name().parse::<ScorerBackend>().unwrap(), b);
        }
        assert!(matches!(
            "dino".parse::<ScorerBackend>(),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn retry_reports_attempts() {
        let policy = RetryPolicy {
            max_attempts: 3,
            backoff_ms: 0,
            timeout_ms: 10,
        };
        let calls = Cell::new(0);
        let err = policy
            .run::<()>("c", || {
                calls.set(calls.get() + 1);
                Err(Error::Client {
                    client: "c".into(),
                    attempts: 1,
                    message: "down".into(),
                })
            })
            .unwrap_err();
        assert_eq!(calls.get(), 3);
        assert!(matches!(err, Error::Client { attempts: 3, .. }));

        let calls = Cell::new(0);
        let v = policy
            .run("c", || {
                calls.set(calls.get() + 1);
                if calls.get() < 2 {
                    Err(Error::Client {
                        client: "c".into(),
                        attempts: 1,
                        message: "flaky".into(),
                    })
                } else {
                    Ok(7)
                }
            })
            .unwrap();
        assert_eq!(v, 7);
    }
}
