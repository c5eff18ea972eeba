use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dense_caption::prompt_nouns;
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::rewards::{cosine_similarity, ImageTextScorerClient, StubClipScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Fid,
    ClipScore,
    Tifa,
}

impl MetricName {
    pub const ALL: [MetricName; 3] = [MetricName::Fid, MetricName::ClipScore, MetricName::Tifa];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Fid => "fid",
            MetricName::ClipScore => "clip_score",
            MetricName::Tifa => "tifa",
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, MetricName::Fid)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s || (s == "clip" && *m == MetricName::ClipScore))
            .ok_or_else(|| {
                Error::config(
                    "metrics",
                    format!("unknown metric `{s}` (fid, clip_score, tifa)"),
                )
            })
    }
}

/// Metric scored independently for each (image, prompt) pair and averaged.
pub trait PromptMetric: Send + Sync {
    fn id(&self) -> &str;
    fn metric(&self) -> MetricName;
    fn score(&self, image: &LatentImage, prompt: &Prompt) -> Result<f64>;
}

/// Metric defined only over the whole generated set.
pub trait SetMetric: Send + Sync {
    fn id(&self) -> &str;
    fn metric(&self) -> MetricName;
    fn score(&self, images: &[&LatentImage]) -> Result<f64>;
}

/// CLIP score through any image-text scorer client.
pub struct ClipScoreMetric<S> {
    scorer: S,
}

impl<S: ImageTextScorerClient + Send + Sync> ClipScoreMetric<S> {
    pub fn new(scorer: S) -> Self {
        Self { scorer }
    }
}

impl<S: ImageTextScorerClient + Send + Sync> PromptMetric for ClipScoreMetric<S> {
    fn id(&self) -> &str {
        self.scorer.id()
    }

    fn metric(&self) -> MetricName {
        MetricName::ClipScore
    }

    fn score(&self, image: &LatentImage, prompt: &Prompt) -> Result<f64> {
        Ok(self.scorer.score(image, prompt)?.score)
    }
}

/// Question-answering stand-in: one yes/no question per prompt noun, answered
/// "yes" when the image embedding leans towards the noun's embedding. The
/// score is the fraction of "yes" answers.
pub struct StubTifa {
    embedder: StubClipScorer,
    id: String,
}

impl StubTifa {
    pub fn new(embedder: StubClipScorer) -> Self {
        let id = format!("stub-tifa[{}]", embedder.id());
        Self { embedder, id }
    }

    pub fn questions(prompt: &Prompt) -> Vec<String> {
        prompt_nouns(prompt)
    }

    pub fn answer(&self, image: &LatentImage, noun: &str) -> Result<bool> {
        let img = self.embedder.image_embedding(image);
        let txt = self.embedder.text_embedding(noun)?;
        Ok(cosine_similarity(&img, &txt)? > 0.0)
    }
}

impl PromptMetric for StubTifa {
    fn id(&self) -> &str {
        &self.id
    }

    fn metric(&self) -> MetricName {
        MetricName::Tifa
    }

    fn score(&self, image: &LatentImage, prompt: &Prompt) -> Result<f64> {
        let questions = Self::questions(prompt);
        if questions.is_empty() {
            return Err(Error::Client {
                client: self.id.clone(),
                message: format!("no questions generated for prompt `{}`", prompt.id),
                attempts: 1,
            });
        }
        let mut yes = 0usize;
        for q in &questions {
            if self.answer(image, q)? {
                yes += 1;
            }
        }
        Ok(yes as f64 / questions.len() as f64)
    }
}

/// Per-feature mean and variance of a reference image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Channel means followed by channel standard deviations.
    pub fn features(image: &LatentImage) -> Vec<f64> {
        let means = image.channel_means();
        let data = image.data();
        let (h, w) = image.spatial();
        let n = (h * w) as f64;
        let stds = means.iter().enumerate().map(|(c, m)| {
            let ss: f64 = data
                .index_axis(ndarray::Axis(0), c)
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum();
            (ss / n).sqrt()
        });
        means.iter().copied().chain(stds).collect()
    }

    pub fn from_images(images: &[&LatentImage]) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::config("fid.reference", "needs at least one image"));
        };
        let feats: Vec<Vec<f64>> = images.iter().map(|i| Self::features(i)).collect();
        let d = feats[0].len();
        if feats.iter().any(|f| f.len() != d) {
            return Err(Error::shape(
                "fid features",
                &[d],
                &[Self::features(first).len()],
            ));
        }
        let n = feats.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|k| feats.iter().map(|f| f[k]).sum::<f64>() / n)
            .collect();
        let var = (0..d)
            .map(|k| feats.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / n)
            .collect();
        Ok(Self {
            mean,
            var,
            count: feats.len(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let stats: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            locator: format!("{}:{}", path.display(), e.line()),
            message: e.to_string(),
        })?;
        if stats.mean.len() != stats.var.len()
            || stats.var.iter().any(|v| *v < 0.0 || !v.is_finite())
        {
            return Err(Error::Parse {
                locator: path.display().to_string(),
                message: "mean/var lengths differ or variances are invalid".into(),
            });
        }
        Ok(stats)
    }

    /// Fréchet distance between Gaussians with diagonal covariances.
    pub fn frechet_distance(&self, other: &FeatureStats) -> Result<f64> {
        if self.mean.len() != other.mean.len() {
            return Err(Error::shape(
                "fid statistics",
                &[self.mean.len()],
                &[other.mean.len()],
            ));
        }
        let d: f64 = (0..self.mean.len())
            .map(|k| {
                (self.mean[k] - other.mean[k]).powi(2) + self.var[k] + other.var[k]
                    - 2.0 * (self.var[k] * other.var[k]).sqrt()
            })
            .sum();
        Ok(d.max(0.0))
    }
}

/// FID against externally supplied reference statistics, on stub features.
pub struct StubFid {
    reference: FeatureStats,
    id: String,
}

impl StubFid {
    pub fn new(reference: FeatureStats, reference_id: &str) -> Self {
        Self {
            reference,
            id: format!("stub-fid[{reference_id}]"),
        }
    }
}

impl SetMetric for StubFid {
    fn id(&self) -> &str {
        &self.id
    }

    fn metric(&self) -> MetricName {
        MetricName::Fid
    }

    fn score(&self, images: &[&LatentImage]) -> Result<f64> {
        FeatureStats::from_images(images)?.frechet_distance(&self.reference)
    }
}

/// Returns the same value for every input; usable as either metric kind.
#[derive(Debug, Clone)]
pub struct ConstantMetric {
    metric: MetricName,
    value: f64,
    id: String,
}

impl ConstantMetric {
    pub fn new(metric: MetricName, value: f64) -> Self {
        Self {
            metric,
            value,
            id: format!("constant-{metric}={value}"),
        }
    }
}

impl PromptMetric for ConstantMetric {
    fn id(&self) -> &str {
        &self.id
    }

    fn metric(&self) -> MetricName {
        self.metric
    }

    fn score(&self, _image: &LatentImage, _prompt: &Prompt) -> Result<f64> {
        Ok(self.value)
    }
}

impl SetMetric for ConstantMetric {
    fn id(&self) -> &str {
        &self.id
    }

    fn metric(&self) -> MetricName {
        self.metric
    }

    fn score(&self, _images: &[&LatentImage]) -> Result<f64> {
        Ok(self.value)
    }
}

/// The configured metric clients of one evaluation.
#[derive(Default)]
pub struct MetricClients {
    pub per_prompt: Vec<Box<dyn PromptMetric>>,
    pub per_set: Vec<Box<dyn SetMetric>>,
}

impl MetricClients {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.per_prompt.is_empty() && self.per_set.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.per_prompt
            .iter()
            .map(|m| format!("{}={}", m.metric(), m.id()))
            .chain(
                self.per_set
                    .iter()
                    .map(|m| format!("{}={}", m.metric(), m.id())),
            )
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::ScorerBackend;

    #[test]
    fn direction_flags() {
        assert!(MetricName::Fid.lower_is_better());
        assert!(!MetricName::ClipScore.lower_is_better());
        assert!(!MetricName::Tifa.lower_is_better());
        assert_eq!("clip".parse::<MetricName>().unwrap(), MetricName::ClipScore);
        assert!("is".parse::<MetricName>().is_err());
    }

    #[test]
    fn frechet_of_identical_sets_is_zero() {
        let a = LatentImage::filled([2, 3, 3], 0.2);
        let b = LatentImage::filled([2, 3, 3], 0.6);
        let stats = FeatureStats::from_images(&[&a, &b]).unwrap();
        assert_eq!(stats.frechet_distance(&stats).unwrap(), 0.0);
        let fid = StubFid::new(stats.clone(), "ref");
        assert_eq!(fid.score(&[&a, &b]).unwrap(), 0.0);
        // two constant channels at 0.2: mean shift 0.2 per channel, variance 0.04 vs 0
        let d = fid.score(&[&a, &a]).unwrap();
        let expect = 2.0 * (0.2f64.powi(2) + 0.04 + 0.0);
        assert!((d - expect).abs() < 1e-12, "{d}");
    }

    #[test]
    fn tifa_counts_answers() {
        let tifa = StubTifa::new(StubClipScorer::new(ScorerBackend::Clip, 16));
        let p = Prompt::from_text("a red book and a yellow pen").unwrap();
        assert_eq!(StubTifa::questions(&p), vec!["book", "pen"]);
        let img = LatentImage::filled([4, 4, 4], 0.3);
        let s = tifa.score(&img, &p).unwrap();
        let yes = ["book", "pen"]
            .iter()
            .filter(|n| tifa.answer(&img, n).unwrap())
            .count();
        assert_eq!(s, yes as f64 / 2.0);
        assert!(matches!(
            tifa.score(&img, &Prompt::from_text("the and of").unwrap()),
            Err(Error::Client { .. })
        ));
    }
}
