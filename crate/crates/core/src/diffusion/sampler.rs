use ndarray::Zip;

use super::attention::{AttentionHook, AttentionTrace};
use super::backbone::{Conditioning, Denoiser};
use super::latent::LatentImage;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::util::rng_stream;

const STREAM_INIT: u64 = 0x5a_0001;
const STREAM_STEP: u64 = 0x5a_0002;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub latent: LatentImage,
    pub trace: AttentionTrace,
}

/// One ancestral step `x_t -> x_{t-1}` with `Sigma = beta_t I`.
///
/// `z` is the fresh standard-normal noise; it is ignored at `t = 1`.
pub fn reverse_step(
    xt: &LatentImage,
    eps: &LatentImage,
    t: usize,
    schedule: &NoiseSchedule,
    z: &LatentImage,
) -> Result<LatentImage> {
    schedule.check_step(t)?;
    xt.check_same_shape(eps, "reverse_step")?;
    let beta = schedule.beta(t);
    let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let sigma = if t > 1 { beta.sqrt() } else { 0.0 };
    let out = Zip::from(xt.data())
        .and(eps.data())
        .and(z.data())
        .map_collect(|&x, &e, &n| inv_sqrt_alpha * (x - coef * e) + sigma * n);
    LatentImage::new(out).map_err(|_| Error::numeric(format!("reverse step {t}")))
}

/// Runs the reverse chain from `x_from` (at step `from_t`) down to step
/// `to_t`, returning `x_{to_t}`. Step noise is drawn from per-step streams of
/// `noise_seed`, so a partial run reproduces the prefix of a full one.
#[allow(clippy::too_many_arguments)]
pub fn sample_range<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    x_from: LatentImage,
    from_t: usize,
    to_t: usize,
    noise_seed: u64,
    hook: Option<&dyn AttentionHook>,
    mut trace: Option<&mut AttentionTrace>,
) -> Result<LatentImage> {
    if from_t > schedule.steps() || to_t > from_t {
        return Err(Error::StepOutOfRange {
            t: from_t,
            max: schedule.steps(),
        });
    }
    let total = schedule.steps();
    let mut x = x_from;
    for t in ((to_t + 1)..=from_t).rev() {
        let eps = denoiser.predict_noise(&x, cond, t, total, hook, trace.as_deref_mut())?;
        let z = if t > 1 {
            LatentImage::standard_normal(
                x.shape(),
                &mut rng_stream(noise_seed, STREAM_STEP, t as u64),
            )
        } else {
            LatentImage::zeros(x.shape())
        };
        x = reverse_step(&x, &eps, t, schedule, &z)?;
    }
    Ok(x)
}

/// Initial latent `x_T ~ N(0, I)` for `seed`.
pub fn initial_latent(shape: [usize; 3], seed: u64) -> LatentImage {
    LatentImage::standard_normal(shape, &mut rng_stream(seed, STREAM_INIT, 0))
}

/// Generates `x_0` from `x_T ~ N(0, I)`, recording every attention map.
pub fn sample<D: Denoiser + ?Sized>(
    prompt: &Prompt,
    schedule: &NoiseSchedule,
    denoiser: &D,
    hook: Option<&dyn AttentionHook>,
    seed: u64,
) -> Result<SampleOutput> {
    let cond = denoiser.encode(&prompt.text);
    let x_t = initial_latent(denoiser.latent_shape(), seed);
    let mut trace = AttentionTrace::default();
    let latent = sample_range(
        denoiser,
        &cond,
        schedule,
        x_t,
        schedule.steps(),
        0,
        seed,
        hook,
        Some(&mut trace),
    )?;
    Ok(SampleOutput { latent, trace })
}
