use ndarray::Zip;
use rand::Rng;

use super::backbone::{Denoiser, TrainableDenoiser};
use super::latent::LatentImage;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::util::rng_stream;

/// `x_t = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * noise`.
pub fn forward_noise_at(
    x0: &LatentImage,
    alpha_bar: f64,
    noise: &LatentImage,
) -> Result<LatentImage> {
    x0.check_same_shape(noise, "forward_noise")?;
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    let out = Zip::from(x0.data())
        .and(noise.data())
        .map_collect(|&x, &n| a * x + b * n);
    LatentImage::new(out).map_err(|_| Error::numeric("forward_noise"))
}

/// Samples the closed-form marginal `q(x_t | x_0)` with the supplied noise.
pub fn forward_noise(
    x0: &LatentImage,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &LatentImage,
) -> Result<LatentImage> {
    schedule.check_step(t)?;
    forward_noise_at(x0, schedule.alpha_bar(t), noise)
}

/// `x0' = (x_t - sqrt(1 - alpha_bar) * eps) / sqrt(alpha_bar)`.
pub fn predict_x0_at(
    xt: &LatentImage,
    eps_pred: &LatentImage,
    alpha_bar: f64,
    t: usize,
) -> Result<LatentImage> {
    xt.check_same_shape(eps_pred, "predict_x0")?;
    if alpha_bar <= 0.0 || !alpha_bar.is_finite() {
        return Err(Error::Singularity { t });
    }
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    let out = Zip::from(xt.data())
        .and(eps_pred.data())
        .map_collect(|&x, &e| (x - b * e) / a);
    LatentImage::new(out).map_err(|_| Error::numeric("predict_x0"))
}

pub fn predict_x0(
    xt: &LatentImage,
    eps_pred: &LatentImage,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentImage> {
    schedule.check_step(t)?;
    predict_x0_at(xt, eps_pred, schedule.alpha_bar(t), t)
}

/// `d x0' / d eps` at step `t` (a scalar, the map is elementwise affine).
pub fn x0_noise_coefficient(t: usize, schedule: &NoiseSchedule) -> f64 {
    let ab = schedule.alpha_bar(t);
    -(1.0 - ab).sqrt() / ab.sqrt()
}

/// Step and noise drawn for one evaluation of the denoising objective.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoisingSample {
    pub t: usize,
    pub noise: LatentImage,
}

/// Draws `t ~ U{1..T}` then `eps ~ N(0, I)`.
pub fn draw_denoising_sample(
    shape: [usize; 3],
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> DenoisingSample {
    let t = rng.random_range(1..=schedule.steps());
    let noise = LatentImage::standard_normal(shape, rng);
    DenoisingSample { t, noise }
}

fn squared_error(a: &LatentImage, b: &LatentImage) -> f64 {
    Zip::from(a.data())
        .and(b.data())
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

/// `||eps - eps_theta(x_t, t_p, t)||^2` with `t` and `eps` drawn from `seed`.
pub fn denoising_loss<D: Denoiser + ?Sized>(
    x0: &LatentImage,
    prompt: &Prompt,
    schedule: &NoiseSchedule,
    denoiser: &D,
    seed: u64,
) -> Result<f64> {
    let sample = draw_denoising_sample(x0.shape(), schedule, &mut rng_stream(seed, 0, 0));
    let xt = forward_noise(x0, sample.t, schedule, &sample.noise)?;
    let cond = denoiser.encode(&prompt.text);
    let eps = denoiser.predict_noise(&xt, &cond, sample.t, schedule.steps(), None, None)?;
    if !eps.is_finite() {
        return Err(Error::numeric("denoiser output"));
    }
    Ok(squared_error(&sample.noise, &eps))
}

/// Denoising loss for an explicit sample, accumulating `d loss / d theta`
/// scaled by `weight` into `grads`. Returns the unweighted loss.
pub fn denoising_loss_and_grad<D: TrainableDenoiser>(
    x0: &LatentImage,
    prompt: &Prompt,
    schedule: &NoiseSchedule,
    denoiser: &D,
    sample: &DenoisingSample,
    weight: f64,
    grads: &mut [f64],
) -> Result<f64> {
    let xt = forward_noise(x0, sample.t, schedule, &sample.noise)?;
    let cond = denoiser.encode(&prompt.text);
    let (eps, cache) = denoiser.forward_tracked(&xt, &cond, sample.t)?;
    let loss = squared_error(&sample.noise, &eps);
    if !loss.is_finite() {
        return Err(Error::numeric("L_pre"));
    }
    let grad_out = Zip::from(eps.data())
        .and(sample.noise.data())
        .map_collect(|&e, &n| weight * 2.0 * (e - n));
    denoiser.backward(&cache, &LatentImage::from_array_unchecked(grad_out), grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{
        AttentionHook, AttentionTrace, BackboneConfig, Conditioning, ScheduleSpec, ToyBackbone,
    };
    use ndarray::Array3;

    fn scalar(v: f64) -> LatentImage {
        LatentImage::new(Array3::from_elem((1, 1, 1), v)).unwrap()
    }

    #[test]
    fn zero_noise_schedule_returns_x0() {
        let x0 = LatentImage::filled([2, 3, 3], 0.7);
        let noise = LatentImage::filled([2, 3, 3], -3.0);
        assert_eq!(forward_noise_at(&x0, 1.0, &noise).unwrap(), x0);
    }

    #[test]
    fn scalar_forward_and_inverse() {
        // 0.5 * 1 + sqrt(0.75) * 1
        let xt = forward_noise_at(&scalar(1.0), 0.25, &scalar(1.0)).unwrap();
        let v = xt.data()[[0, 0, 0]];
        assert!((v - 1.3660254037844386).abs() < 1e-12);
        assert!((v - 1.3660).abs() < 1e-4);

        let x0 = predict_x0_at(&scalar(1.3660), &scalar(1.0), 0.25, 1).unwrap();
        assert!((x0.data()[[0, 0, 0]] - 1.0).abs() < 1e-4);
        let x0 = predict_x0_at(&xt, &scalar(1.0), 0.25, 1).unwrap();
        assert!((x0.data()[[0, 0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predict_x0_without_noise_is_identity() {
        let xt = LatentImage::filled([1, 2, 2], 0.3);
        let eps = LatentImage::filled([1, 2, 2], 9.0);
        assert_eq!(predict_x0_at(&xt, &eps, 1.0, 1).unwrap(), xt);
    }

    #[test]
    fn predict_x0_refuses_zero_alpha_bar() {
        let xt = scalar(1.0);
        assert!(matches!(
            predict_x0_at(&xt, &xt, 0.0, 7),
            Err(Error::Singularity { t: 7 })
        ));
    }

    #[test]
    fn range_and_shape_errors() {
        let s = ScheduleSpec::default().build().unwrap();
        let x = LatentImage::zeros([1, 2, 2]);
        assert!(matches!(
            forward_noise(&x, 0, &s, &x),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(matches!(
            forward_noise(&x, 51, &s, &x),
            Err(Error::StepOutOfRange { .. })
        ));
        let other = LatentImage::zeros([1, 3, 2]);
        assert!(matches!(
            forward_noise(&x, 3, &s, &other),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn exact_noise_recovers_x0() {
        let s = ScheduleSpec::default().build().unwrap();
        let mut rng = rng_stream(11, 0, 0);
        let x0 = LatentImage::standard_normal([4, 8, 8], &mut rng);
        let noise = LatentImage::standard_normal([4, 8, 8], &mut rng);
        for t in [1, 10, 30, 50] {
            let xt = forward_noise(&x0, t, &s, &noise).unwrap();
            let back = predict_x0(&xt, &noise, t, &s).unwrap();
            let err = Zip::from(back.data())
                .and(x0.data())
                .fold(0.0f64, |m, a, b| m.max((a - b).abs()));
            assert!(err < 1e-6, "t={t} err={err}");
        }
    }

    /// Denoiser that returns whatever noise it is told to.
    struct Oracle {
        noise: LatentImage,
    }

    impl Denoiser for Oracle {
        fn latent_shape(&self) -> [usize; 3] {
            self.noise.shape()
        }
        fn encode(&self, _text: &str) -> Conditioning {
            Conditioning {
                tokens: vec!["x".into()],
                embeddings: ndarray::Array2::zeros((1, 1)),
            }
        }
        fn predict_noise(
            &self,
            _xt: &LatentImage,
            _cond: &Conditioning,
            _t: usize,
            _total: usize,
            _hook: Option<&dyn AttentionHook>,
            _trace: Option<&mut AttentionTrace>,
        ) -> Result<LatentImage> {
            Ok(self.noise.clone())
        }
    }

    #[test]
    fn oracle_denoiser_has_zero_loss_and_zero_denoiser_has_noise_norm() {
        let s = ScheduleSpec::default().build().unwrap();
        let x0 = LatentImage::filled([2, 4, 4], 0.2);
        let prompt = Prompt::from_text("a cat").unwrap();
        let seed = 5;
        let drawn = draw_denoising_sample(x0.shape(), &s, &mut rng_stream(seed, 0, 0));
        let oracle = Oracle {
            noise: drawn.noise.clone(),
        };
        assert_eq!(
            denoising_loss(&x0, &prompt, &s, &oracle, seed).unwrap(),
            0.0
        );

        let zeros = Oracle {
            noise: LatentImage::zeros(x0.shape()),
        };
        let loss = denoising_loss(&x0, &prompt, &s, &zeros, seed).unwrap();
        let direct: f64 = drawn.noise.data().iter().map(|v| v * v).sum();
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn toy_loss_is_non_negative() {
        let s = ScheduleSpec::default().build().unwrap();
        let model = ToyBackbone::new(BackboneConfig::default()).unwrap();
        let x0 = LatentImage::filled(model.latent_shape(), 0.1);
        let prompt = Prompt::from_text("a red book").unwrap();
        for seed in 0..5 {
            assert!(denoising_loss(&x0, &prompt, &s, &model, seed).unwrap() >= 0.0);
        }
    }

    #[test]
    fn denoising_gradient_matches_central_differences() {
        let s = ScheduleSpec::default().build().unwrap();
        let model = ToyBackbone::new(BackboneConfig::default()).unwrap();
        let mut rng = rng_stream(21, 0, 0);
        let x0 = LatentImage::standard_normal(model.latent_shape(), &mut rng);
        let prompt = Prompt::from_text("a yellow pen").unwrap();
        let drawn = draw_denoising_sample(x0.shape(), &s, &mut rng);
        let mut grads = vec![0.0; model.num_params()];
        denoising_loss_and_grad(&x0, &prompt, &s, &model, &drawn, 1.0, &mut grads).unwrap();

        let loss_at = |params: Vec<f64>| {
            let m = ToyBackbone::from_params(model.config().clone(), params).unwrap();
            let mut scratch = vec![0.0; m.num_params()];
            denoising_loss_and_grad(&x0, &prompt, &s, &m, &drawn, 1.0, &mut scratch).unwrap()
        };
        let h = 1e-5;
        for seg in model.param_segments() {
            let i = seg.offset + seg.len() / 2;
            let mut plus = model.params().to_vec();
            let mut minus = model.params().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
            let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "{}: fd={fd} analytic={} rel={rel}",
                seg.name,
                grads[i]
            );
        }
    }
}
