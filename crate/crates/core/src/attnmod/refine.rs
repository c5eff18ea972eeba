use serde::{Deserialize, Serialize};

use super::hook::install_hook;
use super::modulate::ModulationConfig;
use super::ownership::TokenOwnership;
use crate::dense_caption::{generate_annotations, AnnotationClients, ObjectAnnotation};
use crate::diffusion::{sample, Denoiser, NoiseSchedule, SampleOutput, ToyBackbone};
use crate::error::Result;
use crate::io::KvStore;
use crate::prompt::Prompt;

/// Coarse generation, its annotations, and the modulated regeneration.
#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub tokens: Vec<String>,
    pub annotations: Vec<ObjectAnnotation>,
    pub ownership: TokenOwnership,
    pub coarse: SampleOutput,
    pub refined: SampleOutput,
    /// Set when no prompt token is owned by any object; `refined` is then a
    /// copy of `coarse`.
    pub skipped: Option<String>,
}

/// Attention mass from an object's masked queries to its tokens, summed
/// over all traced evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMass {
    pub tag: String,
    pub score: f64,
    pub coarse: f64,
    pub refined: f64,
}

impl RefineOutput {
    pub fn object_masses(&self) -> Vec<ObjectMass> {
        self.annotations
            .iter()
            .filter_map(|a| {
                let tokens = self.ownership.tokens_of(a.object_index);
                if tokens.is_empty() || a.mask.is_empty() {
                    return None;
                }
                let queries: Vec<usize> = (0..a.mask.cells().len())
                    .filter(|&p| a.mask.cells()[p])
                    .collect();
                Some(ObjectMass {
                    tag: a.tag.clone(),
                    score: a.score.value(),
                    coarse: self.coarse.trace.mass(&queries, &tokens),
                    refined: self.refined.trace.mass(&queries, &tokens),
                })
            })
            .collect()
    }
}

/// Samples the prompt, annotates the result and samples again with the same
/// seed while cross-attention is modulated.
pub fn refine(
    backbone: &mut ToyBackbone,
    schedule: &NoiseSchedule,
    prompt: &Prompt,
    clients: &AnnotationClients<'_>,
    cache: Option<&KvStore>,
    cfg: &ModulationConfig,
    seed: u64,
) -> Result<RefineOutput> {
    cfg.validate()?;
    let coarse = sample(prompt, schedule, &*backbone, None, seed)?;
    refine_from(
        backbone, schedule, prompt, coarse, clients, cache, cfg, seed,
    )
}

/// Refinement of an existing coarse generation. The re-sample uses `seed`,
/// so `coarse` should come from the same seed for a like-for-like result.
#[allow(clippy::too_many_arguments)]
pub fn refine_from(
    backbone: &mut ToyBackbone,
    schedule: &NoiseSchedule,
    prompt: &Prompt,
    coarse: SampleOutput,
    clients: &AnnotationClients<'_>,
    cache: Option<&KvStore>,
    cfg: &ModulationConfig,
    seed: u64,
) -> Result<RefineOutput> {
    cfg.validate()?;
    let annotations = generate_annotations(&coarse.latent, prompt, clients, cache)?;
    let tokens = backbone.encode(&prompt.text).tokens;
    let ownership = TokenOwnership::match_prompt_tokens(&tokens, &annotations);
    let reason = if annotations.is_empty() {
        Some("no objects were annotated")
    } else if !ownership.any_owned() {
        Some("no annotated object owns a prompt token")
    } else if annotations.iter().all(|a| a.mask.is_empty()) {
        Some("every object mask is empty")
    } else {
        None
    };
    if let Some(reason) = reason {
        return Ok(RefineOutput {
            tokens,
            annotations,
            ownership,
            refined: coarse.clone(),
            coarse,
            skipped: Some(reason.to_string()),
        });
    }
    let handle = install_hook(backbone, &annotations, &ownership, cfg)?;
    let refined = sample(prompt, schedule, &*backbone, None, seed);
    backbone.uninstall_hook(handle)?;
    Ok(RefineOutput {
        tokens,
        annotations,
        ownership,
        coarse,
        refined: refined?,
        skipped: None,
    })
}
