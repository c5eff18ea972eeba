use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::Serialize;

use semalign_core::diffusion::sample;
use semalign_core::io::read_latent;
use semalign_core::rewards::{caption_reward, embedding_reward, ScorerBackend};
use semalign_core::Prompt;

use super::{load_model, write_json};
use crate::clients::Clients;
use crate::run::RewardEntry;
use crate::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Caption,
    Clip,
    Blip,
    #[value(name = "imagereward")]
    ImageReward,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub prompt: String,
    #[arg(long, value_enum)]
    pub reward: RewardKind,
    /// Image to score (`.npy`); generated from `--seed` when omitted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

pub fn run(ctx: &mut Ctx, args: &ScoreArgs) -> Result<()> {
    let prompt = Prompt::from_text(args.prompt.clone())?;
    ctx.run.record.prompts = vec![prompt.text.clone()];
    let clients = Clients::new(&ctx.cfg, ctx.global.stub_clients)?;
    // resolve clients before the (slower) generation so misconfiguration fails fast
    let score = match args.reward {
        RewardKind::Caption => {
            let (captioner, encoder) = (clients.captioner()?, clients.encoder()?);
            let image = image(ctx, args, &prompt)?;
            caption_reward(&prompt, &image, captioner.as_ref(), encoder.as_ref())?
        }
        other => {
            let backend = match other {
                RewardKind::Clip => ScorerBackend::Clip,
                RewardKind::Blip => ScorerBackend::Blip,
                _ => ScorerBackend::ImageReward,
            };
            let scorer = clients.image_text_scorer(backend)?;
            let image = image(ctx, args, &prompt)?;
            embedding_reward(&prompt, &image, scorer.as_ref())?
        }
    };
    println!("reward {}: {:.6}", score.reward_name, score.value);
    if let Some(c) = &score.caption {
        println!("caption: {c}");
    }
    ctx.run.record.rewards.push(RewardEntry {
        name: score.reward_name.clone(),
        value: score.value,
        prompt_id: Some(prompt.id.clone()),
    });
    write_json(ctx, "score.json", &score)?;
    Ok(())
}

fn image(ctx: &Ctx, args: &ScoreArgs, prompt: &Prompt) -> Result<semalign_core::LatentImage> {
    Ok(match &args.image {
        Some(path) => read_latent(path)?,
        None => {
            let model = load_model(ctx, args.checkpoint.as_deref())?;
            sample(
                prompt,
                &ctx.cfg.schedule.build()?,
                &model,
                None,
                ctx.global.seed,
            )?
            .latent
        }
    })
}
