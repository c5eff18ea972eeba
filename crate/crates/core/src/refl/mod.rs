//! Reward feedback fine-tuning of the denoiser.

mod config;
mod data;
mod state;
mod step;
mod train;

pub use config::ReFLConfig;
pub use data::{FixedPretrain, PretrainSource, ProceduralPretrain, PromptCycler};
pub use state::{Checkpoint, CheckpointHeader, Optimizer, TensorEntry, TrainState};
pub use step::{
    draw_t, loss_and_grad, prepare_step, pretrain_step, refl_step, LossParts, PreparedItem,
    PreparedPretrain, PreparedStep, StepMetrics,
};
pub use train::{train, validation_reward, StepTiming, TrainInputs, TrainReport, ValidationRecord};

#[cfg(test)]
mod tests;
