use super::annotation::BinaryMask;
use super::clients::{LlmScorerClient, SegmenterClient, TaggerClient};
use super::protocol::render_scoring_prompt;
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

pub struct SubprocessTagger(pub SubprocessClient);

impl TaggerClient for SubprocessTagger {
    fn id(&self) -> &str {
        &self.0.id
    }

    fn tag(&self, image: &LatentImage) -> Result<Vec<String>> {
        let resp = self.0.call(&WireRequest {
            task: "tag".into(),
            image: Some(WireImage::from(image)),
            ..Default::default()
        })?;
        resp.tags.ok_or_else(|| missing(&self.0, "tags"))
    }
}

/// Sends the rendered scoring template and returns the completion text.
pub struct SubprocessLlmScorer(pub SubprocessClient);

impl LlmScorerClient for SubprocessLlmScorer {
    fn id(&self) -> &str {
        &self.0.id
    }

    fn score(&self, prompt: &Prompt, tags: &[String]) -> Result<String> {
        let resp = self.0.call(&WireRequest {
            task: "complete".into(),
            text: Some(render_scoring_prompt(prompt, tags)),
            ..Default::default()
        })?;
        resp.text.ok_or_else(|| missing(&self.0, "text"))
    }
}

pub struct SubprocessSegmenter(pub SubprocessClient);

impl SegmenterClient for SubprocessSegmenter {
    fn id(&self) -> &str {
        &self.0.id
    }

    fn segment(&self, image: &LatentImage, tag: &str) -> Result<BinaryMask> {
        let resp = self.0.call(&WireRequest {
            task: "segment".into(),
            image: Some(WireImage::from(image)),
            text: Some(tag.to_string()),
            ..Default::default()
        })?;
        resp.mask.ok_or_else(|| missing(&self.0, "mask"))?.decode()
    }
}
