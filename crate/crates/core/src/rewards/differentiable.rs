use rand::Rng;
use rand_distr::StandardNormal;

use super::clients::TextEncoderClient;
use super::score::cosine_similarity;
use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::util::rng_stream;

/// A reward with an analytic gradient with respect to the image.
pub trait DifferentiableReward {
    fn name(&self) -> &str;

    /// Returns the reward and `d reward / d image`.
    fn evaluate(&self, prompt: &Prompt, image: &LatentImage) -> Result<(f64, LatentImage)>;
}

/// Spreads per-channel gradients uniformly over the spatial positions.
fn broadcast_channel_grad(shape: [usize; 3], per_channel: &[f64]) -> LatentImage {
    let n = (shape[1] * shape[2]) as f64;
    let data = ndarray::Array3::from_shape_fn(shape, |(c, _, _)| per_channel[c] / n);
    LatentImage::from_array_unchecked(data)
}

/// Negative RMS distance of the image's channel means to a target value.
#[derive(Debug, Clone)]
pub struct ChannelTargetReward {
    pub target: f64,
}

impl Default for ChannelTargetReward {
    fn default() -> Self {
        Self { target: 0.5 }
    }
}

impl DifferentiableReward for ChannelTargetReward {
    fn name(&self) -> &str {
        "channel_target"
    }

    fn evaluate(&self, _prompt: &Prompt, image: &LatentImage) -> Result<(f64, LatentImage)> {
        let means = image.channel_means();
        let c = means.len() as f64;
        let dist = (means.iter().map(|m| (m - self.target).powi(2)).sum::<f64>() / c).sqrt();
        if !dist.is_finite() {
            return Err(Error::numeric("channel_target reward"));
        }
        let per_channel: Vec<f64> = if dist > 0.0 {
            means
                .iter()
                .map(|m| -(m - self.target) / (c * dist))
                .collect()
        } else {
            vec![0.0; means.len()]
        };
        Ok((-dist, broadcast_channel_grad(image.shape(), &per_channel)))
    }
}

/// Constant reward with zero gradient.
#[derive(Debug, Clone)]
pub struct ConstantReward {
    pub value: f64,
}

impl DifferentiableReward for ConstantReward {
    fn name(&self) -> &str {
        "constant"
    }

    fn evaluate(&self, _prompt: &Prompt, image: &LatentImage) -> Result<(f64, LatentImage)> {
        Ok((self.value, LatentImage::zeros(image.shape())))
    }
}

/// Differentiable caption reward for desk-scale fine-tuning.
///
/// A real captioner is not differentiable, so the caption embedding of the
/// image is replaced by a fixed linear read-out of its channel means into
/// the text embedding space. The reward is the cosine similarity between
/// that read-out and the encoded prompt.
pub struct SoftCaptionReward<E> {
    encoder: E,
    projection: Vec<f64>,
    channels: usize,
    name: String,
}

impl<E: TextEncoderClient> SoftCaptionReward<E> {
    pub fn new(encoder: E, channels: usize, seed: u64) -> Self {
        let dim = encoder.dim();
        let mut rng = rng_stream(seed, 0x50f7, channels as u64);
        let projection = (0..dim * channels)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let name = format!("caption_surrogate[{}]", encoder.id());
        Self {
            encoder,
            projection,
            channels,
            name,
        }
    }

    pub fn caption_embedding(&self, image: &LatentImage) -> Vec<f64> {
        let means = image.channel_means();
        self.projection
            .chunks(self.channels)
            .map(|row| row.iter().zip(&means).map(|(p, m)| p * m).sum())
            .collect()
    }
}

impl<E: TextEncoderClient> DifferentiableReward for SoftCaptionReward<E> {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, prompt: &Prompt, image: &LatentImage) -> Result<(f64, LatentImage)> {
        if image.channels() != self.channels {
            return Err(Error::shape(
                "caption surrogate input",
                &[self.channels],
                &[image.channels()],
            ));
        }
        let a = self.caption_embedding(image);
        let b = self.encoder.encode(&prompt.text)?;
        let cos = cosine_similarity(&a, &b)?;
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d_a: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(ai, bi)| bi / (na * nb) - cos * ai / (na * na))
            .collect();
        let per_channel: Vec<f64> = (0..self.channels)
            .map(|c| {
                self.projection
                    .chunks(self.channels)
                    .zip(&d_a)
                    .map(|(row, g)| row[c] * g)
                    .sum()
            })
            .collect();
        Ok((cos, broadcast_channel_grad(image.shape(), &per_channel)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::HashingEncoder;
    use ndarray::Array3;

    fn fd_check(reward: &dyn DifferentiableReward, image: &LatentImage) {
        let p = Prompt::from_text("a red book").unwrap();
        let (_, g) = reward.evaluate(&p, image).unwrap();
        let h = 1e-6;
        for idx in [(0, 0, 0), (1, 2, 3), (3, 7, 7)] {
            let bump = |d: f64| {
                let mut a: Array3<f64> = image.data().clone();
                a[idx] += d;
                reward
                    .evaluate(&p, &LatentImage::new(a).unwrap())
                    .unwrap()
                    .0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            assert!(
                (fd - g.data()[idx]).abs() < 1e-7,
                "{idx:?}: fd={fd} g={}",
                g.data()[idx]
            );
        }
    }

    fn image() -> LatentImage {
        LatentImage::standard_normal([4, 8, 8], &mut rng_stream(4, 4, 4))
    }

    #[test]
    fn channel_target_gradient() {
        fd_check(&ChannelTargetReward::default(), &image());
    }

    #[test]
    fn channel_target_is_zero_at_target() {
        let p = Prompt::from_text("x").unwrap();
        let (r, g) = ChannelTargetReward::default()
            .evaluate(&p, &LatentImage::filled([4, 8, 8], 0.5))
            .unwrap();
        assert_eq!(r, 0.0);
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn soft_caption_gradient_and_range() {
        let r = SoftCaptionReward::new(HashingEncoder::new(12), 4, 1);
        fd_check(&r, &image());
        let (v, _) = r
            .evaluate(&Prompt::from_text("a cat").unwrap(), &image())
            .unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
}
