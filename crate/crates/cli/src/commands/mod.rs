pub mod eval;
pub mod finetune;
pub mod generate;
pub mod refine;
pub mod score;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use semalign_core::diffusion::ToyBackbone;
use semalign_core::eval::{load_prompt_set, DatasetName, PromptFormat, PromptSet};
use semalign_core::io::{to_json_pretty, write_atomic};
use semalign_core::refl::Checkpoint;
use semalign_core::Prompt;

use crate::Ctx;

/// Fresh backbone from the config, or the parameters of a checkpoint.
pub fn load_model(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<ToyBackbone> {
    match checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            if ckpt.header.schedule != ctx.cfg.schedule {
                log::warn!(
                    "checkpoint {} was trained with a different schedule",
                    path.display()
                );
            }
            Ok(ckpt.to_state()?.model)
        }
        None => Ok(ToyBackbone::new(ctx.cfg.backbone.clone())?),
    }
}

pub fn infer_format(path: &Path, format: Option<PromptFormat>) -> PromptFormat {
    format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("json") => PromptFormat::CaptionJson,
        _ => PromptFormat::LinesTxt,
    })
}

pub fn prompts_from_flags(
    texts: &[String],
    file: Option<&PathBuf>,
    format: Option<PromptFormat>,
    name: DatasetName,
) -> Result<PromptSet> {
    let set = match file {
        Some(path) => load_prompt_set(path, infer_format(path, format), name)?,
        None => {
            let prompts = texts
                .iter()
                .map(Prompt::from_text)
                .collect::<semalign_core::Result<Vec<_>>>()?;
            PromptSet::from_prompts(name, prompts)?
        }
    };
    if set.is_empty() {
        return Err(semalign_core::Error::config(
            "prompt",
            "no prompts given (use --prompt or --prompts)",
        )
        .into());
    }
    Ok(set)
}

/// Writes pretty JSON into the run directory and records it.
pub fn write_json<T: Serialize>(ctx: &mut Ctx, name: &str, value: &T) -> Result<PathBuf> {
    write_text(ctx, name, &to_json_pretty(value))
}

pub fn write_text(ctx: &mut Ctx, name: &str, text: &str) -> Result<PathBuf> {
    let path = ctx.run.file(name);
    write_atomic(&path, text.as_bytes())?;
    ctx.run.artifact(&path);
    Ok(path)
}
