use super::clients::{
    Caption, CaptionerClient, ImageTextScorerClient, ScorerBackend, ScorerOutput, TextEncoderClient,
};
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::io::{SubprocessClient, WireImage, WireRequest};
use crate::prompt::Prompt;

fn missing(client: &SubprocessClient, field: &str) -> Error {
    Error::protocol(
        format!("{}.{field}", client.id),
        "response lacks the field required by this task",
    )
}

pub struct SubprocessCaptioner(pub SubprocessClient);

impl CaptionerClient for SubprocessCaptioner {
    fn id(&self) -> &str {
        &self.0.id
    }

    fn caption(&self, image: &LatentImage, prompt: &Prompt) -> Result<Caption> {
        let resp = self.0.call(&WireRequest {
            task: "caption".into(),
            image: Some(WireImage::from(image)),
            prompt: Some(prompt.text.clone()),
            ..Default::default()
        })?;
        let text = resp.caption.ok_or_else(|| missing(&self.0, "caption"))?;
        Caption::new(text, self.id())
    }
}

pub struct SubprocessEncoder {
    pub client: SubprocessClient,
    pub dim: usize,
}

impl TextEncoderClient for SubprocessEncoder {
    fn id(&self) -> &str {
        &self.client.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let resp = self.client.call(&WireRequest {
            task: "encode".into(),
            text: Some(text.to_string()),
            ..Default::default()
        })?;
        let v = resp
            .embedding
            .ok_or_else(|| missing(&self.client, "embedding"))?;
        if v.len() != self.dim {
            return Err(Error::shape("embedding", &[self.dim], &[v.len()]));
        }
        Ok(v)
    }
}

pub struct SubprocessScorer {
    pub client: SubprocessClient,
    pub backend: ScorerBackend,
}

impl ImageTextScorerClient for SubprocessScorer {
    fn id(&self) -> &str {
        &self.client.id
    }

    fn backend(&self) -> ScorerBackend {
        self.backend
    }

    fn score(&self, image: &LatentImage, prompt: &Prompt) -> Result<ScorerOutput> {
        let resp = self.client.call(&WireRequest {
            task: "score".into(),
            image: Some(WireImage::from(image)),
            prompt: Some(prompt.text.clone()),
            backend: Some(self.backend.name().into()),
            ..Default::default()
        })?;
        let score = resp.score.ok_or_else(|| missing(&self.client, "score"))?;
        let [lo, hi] = resp.score_range.unwrap_or([-1.0, 1.0]);
        Ok(ScorerOutput {
            score,
            range: (lo, hi),
        })
    }
}
