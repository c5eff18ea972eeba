use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-step variances are laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    /// Linear betas over exactly `steps` steps.
    Linear { beta_start: f64, beta_end: f64 },
    /// A linear schedule over `train_steps` fine steps, sub-sampled to
    /// `steps` coarse steps while preserving the cumulative products.
    Strided {
        beta_start: f64,
        beta_end: f64,
        train_steps: usize,
    },
    /// Explicit betas, one per step.
    Explicit { betas: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta: BetaSchedule,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 50,
            beta: BetaSchedule::Strided {
                beta_start: 1e-4,
                beta_end: 2e-2,
                train_steps: 1000,
            },
        }
    }
}

impl ScheduleSpec {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        Self {
            steps,
            beta: BetaSchedule::Linear {
                beta_start,
                beta_end,
            },
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self)
    }
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    (0..n)
        .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Variance schedule `beta_1..beta_T` with cumulative products
/// `alpha_bar_t = prod_{s<=t} (1 - beta_s)` and `alpha_bar_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(spec: &ScheduleSpec) -> Result<Self> {
        if spec.steps == 0 {
            return Err(Error::config("schedule.steps", "must be positive"));
        }
        let betas = match &spec.beta {
            BetaSchedule::Linear {
                beta_start,
                beta_end,
            } => linspace(*beta_start, *beta_end, spec.steps),
            BetaSchedule::Strided {
                beta_start,
                beta_end,
                train_steps,
            } => {
                if *train_steps < spec.steps || train_steps % spec.steps != 0 {
                    return Err(Error::config(
                        "schedule.beta.train_steps",
                        format!(
                            "must be a positive multiple of steps ({}), got {train_steps}",
                            spec.steps
                        ),
                    ));
                }
                let fine = linspace(*beta_start, *beta_end, *train_steps);
                let stride = train_steps / spec.steps;
                let mut fine_bar = Vec::with_capacity(fine.len());
                let mut acc = 1.0;
                for b in &fine {
                    acc *= 1.0 - b;
                    fine_bar.push(acc);
                }
                let mut prev = 1.0;
                (1..=spec.steps)
                    .map(|k| {
                        let cur = fine_bar[k * stride - 1];
                        let beta = 1.0 - cur / prev;
                        prev = cur;
                        beta
                    })
                    .collect()
            }
            BetaSchedule::Explicit { betas } => {
                if betas.len() != spec.steps {
                    return Err(Error::config(
                        "schedule.beta.betas",
                        format!("expected {} betas, got {}", spec.steps, betas.len()),
                    ));
                }
                betas.clone()
            }
        };
        Self::from_parts(spec.clone(), betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        let spec = ScheduleSpec {
            steps: betas.len(),
            beta: BetaSchedule::Explicit {
                betas: betas.clone(),
            },
        };
        Self::from_parts(spec, betas)
    }

    fn from_parts(spec: ScheduleSpec, betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule.steps", "must be positive"));
        }
        for (i, b) in betas.iter().enumerate() {
            if !(b.is_finite() && *b > 0.0 && *b < 1.0) {
                return Err(Error::config(
                    "schedule.beta",
                    format!("beta_{} = {b} is outside (0, 1)", i + 1),
                ));
            }
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self {
            spec,
            betas,
            alpha_bars,
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::StepOutOfRange {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `alpha_bar_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}
