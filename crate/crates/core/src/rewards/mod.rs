//! Reward functions: the caption reward, image-text baseline rewards, the
//! reward-to-loss map and differentiable rewards used by the trainer.

mod cache;
mod clients;
mod differentiable;
mod score;
mod stubs;
mod subprocess;

pub use cache::{CachedCaptioner, CachedEncoder};
pub use clients::{
    Caption, CaptionerClient, ImageTextScorerClient, RetryPolicy, ScorerBackend, ScorerOutput,
    TextEncoderClient,
};
pub use differentiable::{
    ChannelTargetReward, ConstantReward, DifferentiableReward, SoftCaptionReward,
};
pub(crate) use score::reward_value_to_loss;
pub use score::{
    caption_reward, cosine_similarity, embedding_reward, reward_loss_derivative, reward_to_loss,
    RewardLossMap, RewardScore,
};
pub use stubs::{
    ConstantScorer, DescribingCaptioner, EchoCaptioner, FixedCaptioner, HashingEncoder,
    PixelTargetScorer, StubClipScorer, TableEncoder,
};
pub use subprocess::{SubprocessCaptioner, SubprocessEncoder, SubprocessScorer};
