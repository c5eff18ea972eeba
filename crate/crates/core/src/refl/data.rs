use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::util::{rng_stream, seed_from_str};

const STREAM_SHUFFLE: u64 = 0x7e_0001;
const STREAM_IMAGE: u64 = 0x7e_0002;

/// Endless batches over a prompt list, reshuffled every epoch. The batch for
/// an iteration depends only on the seed and the iteration number.
#[derive(Debug, Clone)]
pub struct PromptCycler {
    prompts: Vec<Prompt>,
    seed: u64,
}

impl PromptCycler {
    pub fn new(prompts: Vec<Prompt>, seed: u64) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::config("dataset", "contains no prompts"));
        }
        Ok(Self { prompts, seed })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.prompts.len()).collect();
        order.shuffle(&mut rng_stream(self.seed, STREAM_SHUFFLE, epoch));
        order
    }

    pub fn batch(&self, iteration: u64, size: usize) -> Vec<Prompt> {
        let n = self.prompts.len() as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (0..size as u64)
            .map(|k| {
                let g = iteration * size as u64 + k;
                let epoch = g / n;
                if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    cached = Some((epoch, self.permutation(epoch)));
                }
                let order = &cached.as_ref().expect("set above").1;
                self.prompts[order[(g % n) as usize]].clone()
            })
            .collect()
    }
}

/// Supplies (image, prompt) pairs for the pre-training regulariser.
pub trait PretrainSource {
    fn batch(&self, iteration: u64, size: usize) -> Vec<(LatentImage, Prompt)>;
}

/// Synthesises smooth toy images around 0.5 whose pattern depends on the
/// prompt, standing in for a captioned image dataset.
#[derive(Debug, Clone)]
pub struct ProceduralPretrain {
    prompts: PromptCycler,
    shape: [usize; 3],
    seed: u64,
}

impl ProceduralPretrain {
    pub fn new(prompts: PromptCycler, shape: [usize; 3], seed: u64) -> Self {
        Self {
            prompts,
            shape,
            seed,
        }
    }

    pub fn image_for(&self, prompt: &Prompt, index: u64) -> LatentImage {
        let mut pattern = rng_stream(seed_from_str(&prompt.text), STREAM_IMAGE, 0);
        let freqs: Vec<(f64, f64, f64)> = (0..self.shape[0])
            .map(|_| {
                (
                    pattern.random_range(0.3..1.2),
                    pattern.random_range(0.3..1.2),
                    pattern.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let mut noise = rng_stream(self.seed, STREAM_IMAGE, index);
        let data = Array3::from_shape_fn(self.shape, |(c, y, x)| {
            let (fy, fx, ph) = freqs[c];
            let n: f64 = noise.sample(StandardNormal);
            0.5 + 0.25 * (fx * x as f64 + ph).sin() * (fy * y as f64).cos() + 0.05 * n
        });
        LatentImage::new(data).expect("finite synthetic image")
    }
}

impl PretrainSource for ProceduralPretrain {
    fn batch(&self, iteration: u64, size: usize) -> Vec<(LatentImage, Prompt)> {
        self.prompts
            .batch(iteration, size)
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                let img = self.image_for(&p, iteration * size as u64 + k as u64);
                (img, p)
            })
            .collect()
    }
}

/// A fixed list of pairs, cycled in order.
#[derive(Debug, Clone)]
pub struct FixedPretrain(pub Vec<(LatentImage, Prompt)>);

impl PretrainSource for FixedPretrain {
    fn batch(&self, iteration: u64, size: usize) -> Vec<(LatentImage, Prompt)> {
        if self.0.is_empty() {
            return Vec::new();
        }
        (0..size as u64)
            .map(|k| {
                let g = (iteration * size as u64 + k) as usize % self.0.len();
                self.0[g].clone()
            })
            .collect()
    }
}
