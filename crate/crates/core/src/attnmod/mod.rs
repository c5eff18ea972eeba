//! Cross-attention re-weighting driven by per-object scores and masks.

mod hook;
mod modulate;
mod ownership;
mod refine;
mod score;

pub use hook::{install_hook, ModulationHook};
pub use modulate::{
    modulate, modulation_term, normalized_logits, pos_neg_maps, AttentionLogits, Extrema,
    ModulationConfig, Normalization,
};
pub use ownership::TokenOwnership;
pub use refine::{refine, refine_from, ObjectMass, RefineOutput};
pub use score::{build_score_matrix, ScoreContribution, ScoreMatrix};
