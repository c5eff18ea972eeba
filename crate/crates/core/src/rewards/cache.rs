use std::sync::Arc;

use super::clients::{Caption, CaptionerClient, TextEncoderClient};
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::io::KvStore;
use crate::prompt::Prompt;
use crate::util::digest_parts;

/// Memoises embeddings in a [`KvStore`] keyed by `(encoder id, text)`.
pub struct CachedEncoder<E> {
    inner: E,
    store: Arc<KvStore>,
}

impl<E: TextEncoderClient> CachedEncoder<E> {
    pub fn new(inner: E, store: Arc<KvStore>) -> Self {
        Self { inner, store }
    }
}

impl<E: TextEncoderClient> TextEncoderClient for CachedEncoder<E> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let key = digest_parts(&["encode", self.inner.id(), text]);
        if let Some(hit) = self.store.get(&key) {
            return serde_json::from_str(&hit).map_err(|e| Error::Parse {
                locator: format!("embedding cache entry {key}"),
                message: e.to_string(),
            });
        }
        let v = self.inner.encode(text)?;
        self.store
            .put(&key, &serde_json::to_string(&v).expect("vector serialises"))?;
        Ok(v)
    }
}

/// Memoises captions keyed by `(captioner id, image digest, prompt)`.
pub struct CachedCaptioner<C> {
    inner: C,
    store: Arc<KvStore>,
}

impl<C: CaptionerClient> CachedCaptioner<C> {
    pub fn new(inner: C, store: Arc<KvStore>) -> Self {
        Self { inner, store }
    }
}

impl<C: CaptionerClient> CaptionerClient for CachedCaptioner<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn caption(&self, image: &LatentImage, prompt: &Prompt) -> Result<Caption> {
        let key = digest_parts(&[
            "caption",
            self.inner.id(),
            image.digest().as_str(),
            prompt.text.as_str(),
        ]);
        if let Some(hit) = self.store.get(&key) {
            return Caption::new(hit, self.inner.id());
        }
        let c = self.inner.caption(image, prompt)?;
        self.store.put(&key, &c.text)?;
        Ok(c)
    }
}
