//! Evaluation: prompt-set ingestion, metric clients, reports and
//! side-by-side comparison.

mod compare;
mod metrics;
mod prompts;
mod report;

#[cfg(test)]
mod tests;

pub use compare::{compare, ComparisonCell, ComparisonRow, ComparisonTable};
pub use metrics::{
    ClipScoreMetric, ConstantMetric, FeatureStats, MetricClients, MetricName, PromptMetric,
    SetMetric, StubFid, StubTifa,
};
pub use prompts::{
    load_prompt_set, parse_prompt_set, DatasetName, PromptFormat, PromptSet, SplitInfo,
};
pub use report::{
    evaluate, load_paired_images, EvalCounts, EvalReport, EvalTimings, MetricScope, MetricSummary,
    PairingEntry, PairingManifest, PromptRecord,
};
