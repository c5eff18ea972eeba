use super::annotation::BinaryMask;
use crate::diffusion::LatentImage;
use crate::error::Result;
use crate::prompt::Prompt;

/// Recognises object categories in an image.
pub trait TaggerClient: Send + Sync {
    fn id(&self) -> &str;
    fn tag(&self, image: &LatentImage) -> Result<Vec<String>>;
}

/// Judges each tag against the prompt. Returns the raw reply, which is
/// parsed strictly by the caller.
pub trait LlmScorerClient: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, prompt: &Prompt, tags: &[String]) -> Result<String>;
}

/// Produces a binary mask for one tag at the image's spatial resolution.
pub trait SegmenterClient: Send + Sync {
    fn id(&self) -> &str;
    fn segment(&self, image: &LatentImage, tag: &str) -> Result<BinaryMask>;
}
