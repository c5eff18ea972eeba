//! Deterministic in-process stand-ins for external models.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::clients::{
    Caption, CaptionerClient, ImageTextScorerClient, ScorerBackend, ScorerOutput, TextEncoderClient,
};
use super::score::cosine_similarity;
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::util::{rng_stream, seed_from_str, tokenize};

/// Captioner that returns the prompt verbatim.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoCaptioner;

impl CaptionerClient for EchoCaptioner {
    fn id(&self) -> &str {
        "stub-echo"
    }

    fn caption(&self, _image: &LatentImage, prompt: &Prompt) -> Result<Caption> {
        Caption::new(prompt.text.clone(), self.id())
    }
}

/// Captioner that always returns the same text.
#[derive(Debug, Clone)]
pub struct FixedCaptioner {
    text: String,
    id: String,
}

impl FixedCaptioner {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let id = format!("stub-fixed:{}", &crate::util::digest_str(&text)[..8]);
        Self { text, id }
    }
}

impl CaptionerClient for FixedCaptioner {
    fn id(&self) -> &str {
        &self.id
    }

    fn caption(&self, _image: &LatentImage, _prompt: &Prompt) -> Result<Caption> {
        Caption::new(self.text.clone(), self.id())
    }
}

const COLORS: [&str; 8] = [
    "red", "green", "blue", "yellow", "black", "white", "pink", "brown",
];
const OBJECTS: [&str; 8] = ["book", "pen", "cat", "dog", "car", "vase", "bird", "chair"];

/// Image-only captioner: picks words from fixed vocabularies by quantising
/// channel statistics.
#[derive(Debug, Default, Clone, Copy)]
pub struct DescribingCaptioner;

impl DescribingCaptioner {
    fn pick<'a>(words: &[&'a str], v: f64) -> &'a str {
        let x = (v.abs() * 7.31).fract();
        words[((x * words.len() as f64) as usize).min(words.len() - 1)]
    }
}

impl CaptionerClient for DescribingCaptioner {
    fn id(&self) -> &str {
        "stub-describe"
    }

    fn caption(&self, image: &LatentImage, _prompt: &Prompt) -> Result<Caption> {
        let m = image.channel_means();
        let at = |i: usize| m[i % m.len()];
        let text = format!(
            "a {} {} next to a {} {}",
            Self::pick(&COLORS, at(0)),
            Self::pick(&OBJECTS, at(1)),
            Self::pick(&COLORS, at(2)),
            Self::pick(&OBJECTS, at(3)),
        );
        Caption::new(text, self.id())
    }
}

/// Bag-of-words encoder: mean of fixed pseudo-random token vectors.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
    id: String,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            id: format!("stub-hash-bow-{dim}/mean-pool"),
        }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = rng_stream(seed_from_str(token), 0xe4c0, self.dim as u64);
        (0..self.dim).map(|_| rng.sample(StandardNormal)).collect()
    }
}

impl TextEncoderClient for HashingEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        let mut out = vec![0.0; self.dim];
        for tok in &tokens {
            for (o, v) in out.iter_mut().zip(self.token_vector(tok)) {
                *o += v;
            }
        }
        if !tokens.is_empty() {
            let n = tokens.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        Ok(out)
    }
}

/// Encoder backed by a fixture table of exact strings.
#[derive(Debug, Clone)]
pub struct TableEncoder {
    entries: BTreeMap<String, Vec<f64>>,
    dim: usize,
    id: String,
}

impl TableEncoder {
    pub fn new<K: Into<String>>(entries: impl IntoIterator<Item = (K, Vec<f64>)>) -> Self {
        let entries: BTreeMap<String, Vec<f64>> =
            entries.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let dim = entries.values().next().map_or(0, Vec::len);
        let mut parts = Vec::new();
        for (k, v) in &entries {
            parts.push(k.clone());
            parts.push(format!("{v:?}"));
        }
        let id = format!("stub-table:{}", &crate::util::digest_parts(&parts)[..8]);
        Self { entries, dim, id }
    }
}

impl TextEncoderClient for TableEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        self.entries
            .get(text)
            .cloned()
            .ok_or_else(|| Error::Client {
                client: self.id.clone(),
                attempts: 1,
                message: format!("no fixture embedding for `{text}`"),
            })
    }
}

/// Scorer that returns a constant in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ConstantScorer {
    backend: ScorerBackend,
    value: f64,
    id: String,
}

impl ConstantScorer {
    pub fn new(backend: ScorerBackend, value: f64) -> Self {
        Self {
            backend,
            value,
            id: format!("stub-constant-{backend}:{value}"),
        }
    }
}

impl ImageTextScorerClient for ConstantScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn backend(&self) -> ScorerBackend {
        self.backend
    }

    fn score(&self, _image: &LatentImage, _prompt: &Prompt) -> Result<ScorerOutput> {
        Ok(ScorerOutput {
            score: self.value,
            range: (-1.0, 1.0),
        })
    }
}

/// Scores `1 - 2 |mean(image) - target| / max_distance`, clamped to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct PixelTargetScorer {
    backend: ScorerBackend,
    target: f64,
    max_distance: f64,
    id: String,
}

impl PixelTargetScorer {
    pub fn new(backend: ScorerBackend, target: f64, max_distance: f64) -> Self {
        Self {
            backend,
            target,
            max_distance,
            id: format!("stub-pixel-target-{backend}:{target}/{max_distance}"),
        }
    }
}

impl ImageTextScorerClient for PixelTargetScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn backend(&self) -> ScorerBackend {
        self.backend
    }

    fn score(&self, image: &LatentImage, _prompt: &Prompt) -> Result<ScorerOutput> {
        let d = (image.mean() - self.target).abs();
        Ok(ScorerOutput {
            score: (1.0 - 2.0 * d / self.max_distance).clamp(-1.0, 1.0),
            range: (-1.0, 1.0),
        })
    }
}

/// CLIP-like stub: cosine between a fixed projection of the image's channel
/// means and the hashed prompt embedding.
#[derive(Debug, Clone)]
pub struct StubClipScorer {
    backend: ScorerBackend,
    encoder: HashingEncoder,
    id: String,
}

impl StubClipScorer {
    pub fn new(backend: ScorerBackend, dim: usize) -> Self {
        Self {
            backend,
            encoder: HashingEncoder::new(dim),
            id: format!("stub-clip-{backend}/{dim}"),
        }
    }

    /// Projects channel means into the text embedding space.
    pub fn image_embedding(&self, image: &LatentImage) -> Vec<f64> {
        let means = image.channel_means();
        let dim = self.encoder.dim();
        let mut rng = rng_stream(0xc11b, means.len() as u64, dim as u64);
        let proj: Vec<f64> = (0..dim * means.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        (0..dim)
            .map(|i| {
                means
                    .iter()
                    .enumerate()
                    .map(|(c, m)| proj[i * means.len() + c] * m)
                    .sum()
            })
            .collect()
    }

    pub fn text_embedding(&self, text: &str) -> Result<Vec<f64>> {
        self.encoder.encode(text)
    }
}

impl ImageTextScorerClient for StubClipScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn backend(&self) -> ScorerBackend {
        self.backend
    }

    fn score(&self, image: &LatentImage, prompt: &Prompt) -> Result<ScorerOutput> {
        let img = self.image_embedding(image);
        let txt = self.text_embedding(&prompt.text)?;
        Ok(ScorerOutput {
            score: cosine_similarity(&img, &txt)?,
            range: (-1.0, 1.0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_encoder_is_deterministic_and_word_order_free() {
        let e = HashingEncoder::new(16);
        assert_eq!(e.encode("red book").unwrap(), e.encode("book red").unwrap());
        assert_ne!(
            e.encode("red book").unwrap(),
            e.encode("blue book").unwrap()
        );
        assert_eq!(e.encode("red book").unwrap().len(), 16);
    }

    #[test]
    fn describing_captioner_depends_on_image() {
        let p = Prompt::from_text("x").unwrap();
        let a = DescribingCaptioner
            .caption(&LatentImage::filled([4, 2, 2], 0.1), &p)
            .unwrap();
        let b = DescribingCaptioner
            .caption(&LatentImage::filled([4, 2, 2], 0.3), &p)
            .unwrap();
        assert_ne!(a.text, b.text);
    }

    #[test]
    fn table_encoder_unknown_text_is_client_error() {
        let e = TableEncoder::new([("a", vec![1.0])]);
        assert!(matches!(e.encode("b"), Err(Error::Client { .. })));
    }
}
