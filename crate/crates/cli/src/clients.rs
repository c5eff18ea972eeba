//! Resolves the configured clients, or their deterministic stubs.

use std::sync::Arc;

use anyhow::Result;

use semalign_core::dense_caption::{
    LlmScorerClient, RuleScorer, SegmenterClient, StubSegmenter, StubTagger, SubprocessLlmScorer,
    SubprocessSegmenter, SubprocessTagger, TaggerClient,
};
use semalign_core::io::KvStore;
use semalign_core::rewards::{
    CachedEncoder, CaptionerClient, DescribingCaptioner, EchoCaptioner, FixedCaptioner,
    HashingEncoder, ImageTextScorerClient, ScorerBackend, StubClipScorer, SubprocessCaptioner,
    SubprocessEncoder, SubprocessScorer, TableEncoder, TextEncoderClient,
};
use semalign_core::{Error, Prompt};

use crate::config::{RunConfig, StubCaptioner};

pub type Encoder = Box<dyn TextEncoderClient + Send + Sync>;
pub type Scorer = Box<dyn ImageTextScorerClient + Send + Sync>;

fn missing(name: &str) -> Error {
    Error::config(
        format!("clients.{name}"),
        format!(
            "no {name} client configured; add a [clients.{name}] section or pass --stub-clients"
        ),
    )
}

pub struct Clients<'a> {
    cfg: &'a RunConfig,
    stub: bool,
    cache: Option<Arc<KvStore>>,
}

impl<'a> Clients<'a> {
    pub fn new(cfg: &'a RunConfig, stub: bool) -> Result<Self> {
        let cache = match &cfg.cache {
            Some(path) => Some(Arc::new(KvStore::open(path)?)),
            None => None,
        };
        Ok(Self { cfg, stub, cache })
    }

    pub fn cache(&self) -> Option<&KvStore> {
        self.cache.as_deref()
    }

    pub fn captioner(&self) -> Result<Box<dyn CaptionerClient>> {
        if self.stub {
            return Ok(match &self.cfg.stubs.captioner {
                StubCaptioner::Echo => Box::new(EchoCaptioner),
                StubCaptioner::Describing => Box::new(DescribingCaptioner),
                StubCaptioner::Fixed(text) => Box::new(FixedCaptioner::new(text.clone())),
            });
        }
        let client = self
            .cfg
            .clients
            .captioner
            .clone()
            .ok_or_else(|| missing("captioner"))?;
        Ok(Box::new(SubprocessCaptioner(client)))
    }

    pub fn encoder(&self) -> Result<Encoder> {
        let inner: Encoder = if self.stub {
            if self.cfg.stubs.encoder_table.is_empty() {
                Box::new(HashingEncoder::new(self.cfg.stubs.encoder_dim))
            } else {
                Box::new(TableEncoder::new(self.cfg.stubs.encoder_table.clone()))
            }
        } else {
            let enc = self
                .cfg
                .clients
                .encoder
                .clone()
                .ok_or_else(|| missing("encoder"))?;
            Box::new(SubprocessEncoder {
                client: enc.client,
                dim: enc.dim,
            })
        };
        Ok(match &self.cache {
            Some(store) if !self.stub => Box::new(CachedEncoder::new(inner, store.clone())),
            _ => inner,
        })
    }

    pub fn image_text_scorer(&self, backend: ScorerBackend) -> Result<Scorer> {
        if self.stub {
            return Ok(Box::new(StubClipScorer::new(
                backend,
                self.cfg.stubs.encoder_dim,
            )));
        }
        let client = self
            .cfg
            .clients
            .scorer
            .clone()
            .ok_or_else(|| missing("scorer"))?;
        Ok(Box::new(SubprocessScorer { client, backend }))
    }

    pub fn tagger(&self, prompt: &Prompt) -> Result<Box<dyn TaggerClient>> {
        if self.stub {
            return Ok(Box::new(StubTagger::from_prompt(
                prompt,
                self.cfg.stubs.extra_tags.iter().cloned(),
            )));
        }
        let client = self
            .cfg
            .clients
            .tagger
            .clone()
            .ok_or_else(|| missing("tagger"))?;
        Ok(Box::new(SubprocessTagger(client)))
    }

    pub fn llm(&self) -> Result<Box<dyn LlmScorerClient>> {
        if self.stub {
            return Ok(match &self.cfg.stubs.blocklist {
                Some(list) => Box::new(RuleScorer::new(list.iter().cloned())),
                None => Box::new(RuleScorer::default()),
            });
        }
        let client = self.cfg.clients.llm.clone().ok_or_else(|| missing("llm"))?;
        Ok(Box::new(SubprocessLlmScorer(client)))
    }

    pub fn segmenter(&self) -> Result<Box<dyn SegmenterClient>> {
        if self.stub {
            return Ok(Box::new(StubSegmenter::with_empty(
                self.cfg.stubs.empty_mask_tags.iter().cloned(),
            )));
        }
        let client = self
            .cfg
            .clients
            .segmenter
            .clone()
            .ok_or_else(|| missing("segmenter"))?;
        Ok(Box::new(SubprocessSegmenter(client)))
    }
}
