use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ReFLConfig;
use super::data::{PretrainSource, PromptCycler};
use super::state::TrainState;
use super::step::{refl_step, StepMetrics};
use crate::diffusion::{initial_latent, sample_range, Denoiser, NoiseSchedule, TrainableDenoiser};
use crate::error::Result;
use crate::prompt::Prompt;
use crate::rewards::DifferentiableReward;
use crate::util::rng_stream;

const STREAM_VALIDATION: u64 = 0x7f_0010;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: u64,
    pub reward: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub iteration: u64,
    pub wall_ms: f64,
}

/// Curves and outcome of a training run. Wall-clock timings are kept apart
/// from the deterministic records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub steps: Vec<StepMetrics>,
    pub validations: Vec<ValidationRecord>,
    pub stopped_early: bool,
    pub best_iteration: Option<u64>,
    pub final_iteration: u64,
    #[serde(skip)]
    pub timings: Vec<StepTiming>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Step(&'a StepMetrics),
    Validation(&'a ValidationRecord),
    Summary {
        config_hash: &'a str,
        steps: usize,
        stopped_early: bool,
        best_iteration: Option<u64>,
        final_iteration: u64,
    },
}

impl TrainReport {
    /// One JSON record per step and validation, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut vals = self.validations.iter().peekable();
        for s in &self.steps {
            lines.push(serde_json::to_string(&ReportLine::Step(s)).expect("serialises"));
            while let Some(v) = vals.next_if(|v| v.iteration == s.iteration + 1) {
                lines.push(serde_json::to_string(&ReportLine::Validation(v)).expect("serialises"));
            }
        }
        for v in vals {
            lines.push(serde_json::to_string(&ReportLine::Validation(v)).expect("serialises"));
        }
        lines.push(
            serde_json::to_string(&ReportLine::Summary {
                config_hash: &self.config_hash,
                steps: self.steps.len(),
                stopped_early: self.stopped_early,
                best_iteration: self.best_iteration,
                final_iteration: self.final_iteration,
            })
            .expect("serialises"),
        );
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn timings_jsonl(&self) -> String {
        self.timings
            .iter()
            .map(|t| serde_json::to_string(t).expect("serialises") + "\n")
            .collect()
    }

    /// Mean of the step reward means over `range` of the recorded steps.
    pub fn mean_step_reward(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let v: Vec<f64> = self.steps[range]
            .iter()
            .filter_map(|s| s.reward_mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Mean reward of fully sampled images for `prompts`. The sampling noise is
/// fixed per prompt position, so successive evaluations are comparable.
pub fn validation_reward<D, R>(
    model: &D,
    schedule: &NoiseSchedule,
    reward: &R,
    prompts: &[Prompt],
    seed: u64,
) -> Result<f64>
where
    D: Denoiser,
    R: DifferentiableReward + ?Sized,
{
    let mut total = 0.0;
    for (k, p) in prompts.iter().enumerate() {
        let noise_seed: u64 = rng_stream(seed, STREAM_VALIDATION, k as u64).random();
        let cond = model.encode(&p.text);
        let x_t = initial_latent(model.latent_shape(), noise_seed);
        let x0 = sample_range(
            model,
            &cond,
            schedule,
            x_t,
            schedule.steps(),
            0,
            noise_seed,
            None,
            None,
        )?;
        total += reward.evaluate(p, &x0)?.0;
    }
    Ok(total / prompts.len().max(1) as f64)
}

/// Inputs of a training run besides the state being trained.
pub struct TrainInputs<'a, R: ?Sized> {
    pub cfg: &'a ReFLConfig,
    pub schedule: &'a NoiseSchedule,
    pub reward: &'a R,
    pub dataset: &'a PromptCycler,
    pub pretrain: &'a dyn PretrainSource,
    pub validation: &'a [Prompt],
    pub config_hash: String,
}

/// Runs reward feedback steps until `max_iterations` or until validation
/// stops improving for `early_stop_patience` evaluations (0 disables early
/// stopping). `on_best` is called with the state after every improvement,
/// typically to write a checkpoint; its failure aborts the run and leaves
/// `state` as it was after the last completed step.
pub fn train<D, R>(
    state: &mut TrainState<D>,
    inputs: &TrainInputs<'_, R>,
    on_best: &mut dyn FnMut(&TrainState<D>) -> Result<()>,
) -> Result<TrainReport>
where
    D: TrainableDenoiser,
    R: DifferentiableReward + ?Sized,
{
    let cfg = inputs.cfg;
    cfg.validate()?;
    let mut report = TrainReport {
        config_hash: inputs.config_hash.clone(),
        final_iteration: state.iteration,
        ..Default::default()
    };
    let mut stale = 0u32;
    for _ in 0..cfg.max_iterations {
        let it = state.iteration;
        let batch = inputs.dataset.batch(it, cfg.batch_size);
        let pre = inputs.pretrain.batch(it, cfg.pretrain_batch_size());
        let started = Instant::now();
        let metrics = refl_step(state, cfg, inputs.schedule, inputs.reward, &batch, &pre)?;
        report.timings.push(StepTiming {
            iteration: it,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        report.steps.push(metrics);
        report.final_iteration = state.iteration;

        if inputs.validation.is_empty() || !state.iteration.is_multiple_of(cfg.validation_interval)
        {
            continue;
        }
        let v = validation_reward(
            &state.model,
            inputs.schedule,
            inputs.reward,
            inputs.validation,
            state.seed,
        )?;
        let improved = state.best_validation_reward.is_none_or(|b| v > b);
        report.validations.push(ValidationRecord {
            iteration: state.iteration,
            reward: v,
            improved,
        });
        if improved {
            stale = 0;
            state.best_validation_reward = Some(v);
            report.best_iteration = Some(state.iteration);
            on_best(state)?;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}
