//! Coarse-to-fine semantic re-alignment for text-to-image diffusion models.
//!
//! The crate is organised around the two stages of the method:
//!
//! * **coarse** re-alignment fine-tunes a denoiser with reward feedback
//!   ([`refl`]) driven by a caption-similarity reward ([`rewards`]);
//! * **fine** re-alignment is training free: objects in a generated image are
//!   recognised, scored and segmented ([`dense_caption`]) and the cross-attention
//!   logits of the denoiser are re-weighted during re-sampling ([`attnmod`]).
//!
//! Everything runs at desk scale on a small deterministic toy backbone
//! ([`diffusion::ToyBackbone`]) with stub clients standing in for captioners,
//! taggers, language models and segmenters.

pub mod attnmod;
pub mod dense_caption;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod io;
pub mod prompt;
pub mod refl;
pub mod rewards;
pub mod util;

pub use error::{Error, ErrorClass, Result};
pub use prompt::Prompt;

pub use diffusion::{LatentImage, NoiseSchedule, ScheduleSpec, ToyBackbone};
