use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An input text prompt with a stable identifier.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
}

impl Prompt {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::config("prompt", "prompt text is empty"));
        }
        Ok(Self {
            id: id.into(),
            text,
        })
    }

    /// Prompt whose id is derived from its text.
    pub fn from_text(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let id = crate::util::digest_str(&text)[..12].to_string();
        Self::new(id, text)
    }

    /// Lower-cased word tokens.
    pub fn words(&self) -> Vec<String> {
        crate::util::tokenize(&self.text)
    }
}
