//! Diffusion process mathematics, the denoiser abstraction, a toy backbone
//! and ancestral sampling with attention hook points.

mod attention;
mod backbone;
mod latent;
mod process;
mod sampler;
mod schedule;

pub use attention::{
    softmax_rows, AttentionCall, AttentionHook, AttentionTrace, HookHandle, IdentityHook,
    TraceRecord, CROSS_ATTENTION_LAYER,
};
pub use backbone::{
    BackboneConfig, Conditioning, Denoiser, ForwardCache, ParamSegment, ToyBackbone,
    TrainableDenoiser, BOS_TOKEN,
};
pub use latent::LatentImage;
pub use process::{
    denoising_loss, denoising_loss_and_grad, draw_denoising_sample, forward_noise,
    forward_noise_at, predict_x0, predict_x0_at, x0_noise_coefficient, DenoisingSample,
};
pub use sampler::{initial_latent, reverse_step, sample, sample_range, SampleOutput};
pub use schedule::{BetaSchedule, NoiseSchedule, ScheduleSpec};
