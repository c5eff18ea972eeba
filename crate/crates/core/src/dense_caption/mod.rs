//! Per-object scores, local captions and masks for a generated image.

mod annotation;
mod clients;
mod harness;
mod pipeline;
mod protocol;
mod stubs;
mod subprocess;

pub use annotation::{
    assign_score, BinaryMask, LikelihoodScore, MaskRle, ObjectAnnotation, Verdict,
};
pub use clients::{LlmScorerClient, SegmenterClient, TaggerClient};
pub use harness::{
    classify, run_harness, FixtureOutcome, FixtureResult, FixtureSet, HarnessReport, PairReport,
    ScorerFixture,
};
pub use pipeline::{generate_annotations, score_table, scorer_cache_key, AnnotationClients};
pub use protocol::{
    parse_scorer_response, render_scoring_prompt, ScoredTag, ScorerReply, ScorerReplyEntry,
    TEMPLATE_VERSION,
};
pub use stubs::{prompt_nouns, RuleScorer, StubSegmenter, StubTagger};
pub use subprocess::{SubprocessLlmScorer, SubprocessSegmenter, SubprocessTagger};
