use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ReFLConfig;
use super::state::TrainState;
use crate::diffusion::{
    denoising_loss_and_grad, draw_denoising_sample, initial_latent, predict_x0, sample_range,
    x0_noise_coefficient, Conditioning, Denoiser, DenoisingSample, LatentImage, NoiseSchedule,
    TrainableDenoiser,
};
use crate::error::{Error, ErrorClass, Result};
use crate::prompt::Prompt;
use crate::rewards::{reward_loss_derivative, DifferentiableReward, RewardLossMap};
use crate::util::rng_stream;

const STREAM_T: u64 = 0x7f_0001;
const STREAM_PREFIX: u64 = 0x7f_0002;
const STREAM_PRETRAIN: u64 = 0x7f_0003;

/// The reward-path input for one prompt: `x_t` is a constant.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub prompt: Prompt,
    pub cond: Conditioning,
    pub xt: LatentImage,
}

#[derive(Debug, Clone)]
pub struct PreparedPretrain {
    pub x0: LatentImage,
    pub prompt: Prompt,
    pub sample: DenoisingSample,
}

/// Everything random about one step, drawn up front so the loss becomes a
/// deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct PreparedStep {
    pub t: usize,
    pub items: Vec<PreparedItem>,
    pub pretrain: Vec<PreparedPretrain>,
}

/// Loss terms of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rewards: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
    /// Mean mapped (and clamped) reward loss, before weighting by lambda.
    pub reward_loss: f64,
    pub l_pre: f64,
    pub l_total: f64,
    /// Denoiser evaluations on the gradient path of the reward term.
    pub tracked_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iteration: u64,
    pub t: usize,
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
    pub l_pre: Option<f64>,
    pub l_total: Option<f64>,
    pub tracked_evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// The reward back-propagation step for an iteration, uniform on
/// `[t_min, t_max]`.
pub fn draw_t(cfg: &ReFLConfig, seed: u64, iteration: u64) -> usize {
    rng_stream(seed, STREAM_T, iteration).random_range(cfg.t_min..=cfg.t_max())
}

fn prepare_pretrain(
    schedule: &NoiseSchedule,
    seed: u64,
    iteration: u64,
    pairs: &[(LatentImage, Prompt)],
) -> Vec<PreparedPretrain> {
    let mut rng = rng_stream(seed, STREAM_PRETRAIN, iteration);
    pairs
        .iter()
        .map(|(x0, p)| PreparedPretrain {
            x0: x0.clone(),
            prompt: p.clone(),
            sample: draw_denoising_sample(x0.shape(), schedule, &mut rng),
        })
        .collect()
}

/// Draws `t`, runs the sampler from `x_T` down to `x_t` for every prompt
/// without tracking, and draws the pre-training noise.
pub fn prepare_step<D: Denoiser>(
    model: &D,
    schedule: &NoiseSchedule,
    cfg: &ReFLConfig,
    seed: u64,
    iteration: u64,
    batch: &[Prompt],
    pretrain: &[(LatentImage, Prompt)],
) -> Result<PreparedStep> {
    let t = draw_t(cfg, seed, iteration);
    let mut seeds = rng_stream(seed, STREAM_PREFIX, iteration);
    let total = schedule.steps();
    let items = batch
        .iter()
        .map(|p| {
            let noise_seed: u64 = seeds.random();
            let cond = model.encode(&p.text);
            let x_t = initial_latent(model.latent_shape(), noise_seed);
            let xt = sample_range(
                model, &cond, schedule, x_t, total, t, noise_seed, None, None,
            )?;
            Ok(PreparedItem {
                prompt: p.clone(),
                cond,
                xt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedStep {
        t,
        items,
        pretrain: prepare_pretrain(schedule, seed, iteration, pretrain),
    })
}

fn clamped_loss(r: f64, map: &RewardLossMap, clamp: Option<f64>) -> (f64, f64) {
    let loss = crate::rewards::reward_value_to_loss(r, map);
    let d = reward_loss_derivative(r, map);
    match clamp {
        Some(c) if loss.abs() > c => (loss.clamp(-c, c), 0.0),
        _ => (loss, d),
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// `L_total = lambda * mean(loss(R(x0'))) + L_pre` for a prepared step.
/// When `grads` is given, `d L_total / d theta` is accumulated into it; the
/// reward term contributes nothing when `lambda` is 0.
pub fn loss_and_grad<D, R>(
    model: &D,
    schedule: &NoiseSchedule,
    cfg: &ReFLConfig,
    reward: &R,
    prep: &PreparedStep,
    mut grads: Option<&mut [f64]>,
) -> Result<LossParts>
where
    D: TrainableDenoiser,
    R: DifferentiableReward + ?Sized,
{
    let t = prep.t;
    schedule.check_step(t)?;
    let coef = x0_noise_coefficient(t, schedule);
    let b = prep.items.len().max(1) as f64;
    let mut rewards = Vec::with_capacity(prep.items.len());
    let mut reward_loss = 0.0;
    let mut tracked = 0;
    for item in &prep.items {
        let (eps, cache) = model.forward_tracked(&item.xt, &item.cond, t)?;
        tracked += 1;
        let x0 = predict_x0(&item.xt, &eps, t, schedule)?;
        let (r, dr_dx0) = reward.evaluate(&item.prompt, &x0)?;
        if !r.is_finite() {
            return Err(Error::numeric("reward"));
        }
        let (loss, dloss) = clamped_loss(r, &cfg.reward_loss, cfg.reward_clamp);
        rewards.push(r);
        reward_loss += loss / b;
        if let Some(g) = grads.as_deref_mut() {
            if cfg.lambda != 0.0 && dloss != 0.0 {
                let w = cfg.lambda / b * dloss * coef;
                let grad_eps = dr_dx0.data().mapv(|v| w * v);
                model.backward(&cache, &LatentImage::from_array_unchecked(grad_eps), g);
            }
        }
    }

    let n_pre = prep.pretrain.len();
    let mut scratch;
    let g_pre: &mut [f64] = match grads.as_deref_mut() {
        Some(g) => g,
        None => {
            scratch = vec![0.0; model.params().len()];
            &mut scratch
        }
    };
    let mut l_pre = 0.0;
    for item in &prep.pretrain {
        let w = 1.0 / n_pre as f64;
        l_pre += w * denoising_loss_and_grad(
            &item.x0,
            &item.prompt,
            schedule,
            model,
            &item.sample,
            w,
            g_pre,
        )?;
    }
    if !l_pre.is_finite() {
        return Err(Error::numeric("L_pre"));
    }
    let l_total = cfg.lambda * reward_loss + l_pre;
    if !l_total.is_finite() {
        return Err(Error::numeric("L_total"));
    }
    if let Some(g) = grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("gradient of L_total"));
        }
    }
    let (reward_mean, reward_std) = mean_std(&rewards);
    Ok(LossParts {
        rewards,
        reward_mean,
        reward_std,
        reward_loss,
        l_pre,
        l_total,
        tracked_evaluations: tracked,
    })
}

fn check_schedule(cfg: &ReFLConfig, schedule: &NoiseSchedule) -> Result<()> {
    cfg.validate()?;
    if cfg.steps != schedule.steps() {
        return Err(Error::config(
            "steps",
            format!(
                "is {} but the schedule has {} steps",
                cfg.steps,
                schedule.steps()
            ),
        ));
    }
    Ok(())
}

/// One reward feedback update. A reward client failure skips the update but
/// still advances the iteration counter.
pub fn refl_step<D, R>(
    state: &mut TrainState<D>,
    cfg: &ReFLConfig,
    schedule: &NoiseSchedule,
    reward: &R,
    batch: &[Prompt],
    pretrain: &[(LatentImage, Prompt)],
) -> Result<StepMetrics>
where
    D: TrainableDenoiser,
    R: DifferentiableReward + ?Sized,
{
    check_schedule(cfg, schedule)?;
    let iteration = state.iteration;
    let prep = prepare_step(
        &state.model,
        schedule,
        cfg,
        state.seed,
        iteration,
        batch,
        pretrain,
    )?;
    let mut grads = vec![0.0; state.model.params().len()];
    let metrics = match loss_and_grad(&state.model, schedule, cfg, reward, &prep, Some(&mut grads))
    {
        Ok(parts) => {
            state.optimizer.apply(state.model.params_mut(), &grads)?;
            StepMetrics {
                iteration,
                t: prep.t,
                reward_mean: Some(parts.reward_mean),
                reward_std: Some(parts.reward_std),
                l_pre: Some(parts.l_pre),
                l_total: Some(parts.l_total),
                tracked_evaluations: parts.tracked_evaluations,
                skipped: None,
            }
        }
        Err(e) if e.class() == ErrorClass::Client => {
            log::warn!("iteration {iteration} skipped: {e}");
            StepMetrics {
                iteration,
                t: prep.t,
                reward_mean: None,
                reward_std: None,
                l_pre: None,
                l_total: None,
                tracked_evaluations: 0,
                skipped: Some(e.to_string()),
            }
        }
        Err(e) => return Err(e),
    };
    state.iteration += 1;
    Ok(metrics)
}

/// One update of the plain denoising objective, drawing the same
/// pre-training noise that [`refl_step`] would at this iteration.
pub fn pretrain_step<D: TrainableDenoiser>(
    state: &mut TrainState<D>,
    cfg: &ReFLConfig,
    schedule: &NoiseSchedule,
    pretrain: &[(LatentImage, Prompt)],
) -> Result<f64> {
    check_schedule(cfg, schedule)?;
    let items = prepare_pretrain(schedule, state.seed, state.iteration, pretrain);
    let mut grads = vec![0.0; state.model.params().len()];
    let mut l_pre = 0.0;
    for item in &items {
        let w = 1.0 / items.len() as f64;
        l_pre += w * denoising_loss_and_grad(
            &item.x0,
            &item.prompt,
            schedule,
            &state.model,
            &item.sample,
            w,
            &mut grads,
        )?;
    }
    if !l_pre.is_finite() {
        return Err(Error::numeric("L_pre"));
    }
    state.optimizer.apply(state.model.params_mut(), &grads)?;
    state.iteration += 1;
    Ok(l_pre)
}
