use serde::{Deserialize, Serialize};

use super::clients::{CaptionerClient, ImageTextScorerClient, TextEncoderClient};
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::util::digest_parts;

/// A scalar semantic-alignment reward with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub value: f64,
    pub reward_name: String,
    /// Digest of the image, prompt, caption (if any) and client ids.
    pub inputs_digest: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub caption: Option<String>,
}

/// Cosine similarity of two embeddings, clamped to `[-1, 1]`.
///
/// The denominator is `sqrt(|a|^2 |b|^2)` so that identical vectors give
/// exactly 1 and swapping the arguments gives a bitwise identical result.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("embedding", &[a.len()], &[b.len()]));
    }
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let aa = dot(a, a);
    let bb = dot(b, b);
    if aa == 0.0 {
        return Err(Error::DegenerateEmbedding("first argument".into()));
    }
    if bb == 0.0 {
        return Err(Error::DegenerateEmbedding("second argument".into()));
    }
    let cos = dot(a, b) / (aa * bb).sqrt();
    if !cos.is_finite() {
        return Err(Error::numeric("cosine similarity"));
    }
    Ok(cos.clamp(-1.0, 1.0))
}

/// Caption reward: cosine similarity between the encoded caption of the
/// generated image and the encoded prompt.
pub fn caption_reward(
    prompt: &Prompt,
    image: &LatentImage,
    captioner: &dyn CaptionerClient,
    encoder: &dyn TextEncoderClient,
) -> Result<RewardScore> {
    if !image.is_finite() {
        return Err(Error::numeric("reward input image"));
    }
    let caption = captioner.caption(image, prompt)?;
    let generated = encoder.encode(&caption.text)?;
    let target = encoder.encode(&prompt.text)?;
    let value = cosine_similarity(&generated, &target).map_err(|e| match e {
        Error::DegenerateEmbedding(which) => {
            Error::DegenerateEmbedding(if which == "first argument" {
                format!("caption `{}`", caption.text)
            } else {
                format!("prompt `{}`", prompt.text)
            })
        }
        other => other,
    })?;
    Ok(RewardScore {
        value,
        reward_name: "caption".into(),
        inputs_digest: digest_parts(&[
            image.digest().as_str(),
            prompt.text.as_str(),
            caption.text.as_str(),
            captioner.id(),
            encoder.id(),
        ]),
        caption: Some(caption.text),
    })
}

/// Image-text similarity reward from an external scorer, normalised to
/// `[-1, 1]`.
pub fn embedding_reward(
    prompt: &Prompt,
    image: &LatentImage,
    scorer: &dyn ImageTextScorerClient,
) -> Result<RewardScore> {
    if !image.is_finite() {
        return Err(Error::numeric("reward input image"));
    }
    let out = scorer.score(image, prompt)?;
    let (lo, hi) = out.range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::config(
            "scorer.range",
            format!("invalid score range ({lo}, {hi})"),
        ));
    }
    if !out.score.is_finite() {
        return Err(Error::numeric("scorer output"));
    }
    let value = (2.0 * (out.score - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
    Ok(RewardScore {
        value,
        reward_name: scorer.backend().name().to_string(),
        inputs_digest: digest_parts(&[image.digest().as_str(), prompt.text.as_str(), scorer.id()]),
        caption: None,
    })
}

/// How a reward becomes a loss term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardLossMap {
    /// `-r`: minimising the loss maximises the reward.
    #[default]
    Negate,
    /// `max(0, m - r)`.
    ReluMargin { margin: f64 },
    /// `max(0, r)`, the reward term exactly as the total-loss formula is
    /// written.
    PaperLiteral,
}

pub fn reward_to_loss(reward: &RewardScore, map: &RewardLossMap) -> f64 {
    reward_value_to_loss(reward.value, map)
}

pub(crate) fn reward_value_to_loss(r: f64, map: &RewardLossMap) -> f64 {
    match map {
        RewardLossMap::Negate => -r,
        RewardLossMap::ReluMargin { margin } => (margin - r).max(0.0),
        RewardLossMap::PaperLiteral => r.max(0.0),
    }
}

/// `d loss / d r`; the subgradient 0 is used at ReLU kinks.
pub fn reward_loss_derivative(r: f64, map: &RewardLossMap) -> f64 {
    match map {
        RewardLossMap::Negate => -1.0,
        RewardLossMap::ReluMargin { margin } => {
            if margin - r > 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        RewardLossMap::PaperLiteral => {
            if r > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}
