use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use semalign_core::diffusion::sample;
use semalign_core::eval::{DatasetName, PairingEntry, PairingManifest, PromptFormat};
use semalign_core::io::{to_json_pretty, write_image_grid, write_latent};
use serde::Serialize;

use super::{load_model, prompts_from_flags, write_json};
use crate::Ctx;

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Prompt text; repeatable.
    #[arg(long)]
    pub prompt: Vec<String>,
    /// Prompt file instead of `--prompt`.
    #[arg(long, conflicts_with = "prompt")]
    pub prompts: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<PromptFormat>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

pub fn parse_format(s: &str) -> Result<PromptFormat, String> {
    s.parse().map_err(|e: semalign_core::Error| e.to_string())
}

#[derive(Serialize)]
struct Generated {
    prompt_id: String,
    text: String,
    image: String,
    digest: String,
}

pub fn run(ctx: &mut Ctx, args: &GenerateArgs) -> Result<()> {
    let set = prompts_from_flags(
        &args.prompt,
        args.prompts.as_ref(),
        args.format,
        DatasetName::Custom,
    )?;
    let model = load_model(ctx, args.checkpoint.as_deref())?;
    let schedule = ctx.cfg.schedule.build()?;
    let images_dir = ctx.run.file("images");
    std::fs::create_dir_all(&images_dir)?;

    let mut latents = Vec::new();
    let mut listing = Vec::new();
    let mut pairs = Vec::new();
    for p in &set.prompts {
        let out = sample(p, &schedule, &model, None, ctx.global.seed)?;
        let file = format!("{}.npy", p.id);
        let path = images_dir.join(&file);
        write_latent(&path, &out.latent)?;
        ctx.run.artifact(&path);
        listing.push(Generated {
            prompt_id: p.id.clone(),
            text: p.text.clone(),
            image: format!("images/{file}"),
            digest: out.latent.digest(),
        });
        pairs.push(PairingEntry {
            prompt_id: p.id.clone(),
            image: file.into(),
        });
        println!("{}  {}  {}", p.id, out.latent.digest(), p.text);
        latents.push(out.latent);
    }
    let manifest = images_dir.join(PairingManifest::FILE_NAME);
    std::fs::write(&manifest, to_json_pretty(&PairingManifest { pairs }))?;
    ctx.run.artifact(&manifest);
    let grid = ctx.run.file("grid.png");
    write_image_grid(&grid, &latents, latents.len().min(4), 8)?;
    ctx.run.artifact(&grid);
    write_json(ctx, "generate.json", &listing)?;
    ctx.run.record.prompts = set.prompts.iter().map(|p| p.text.clone()).collect();
    println!("images in {}", images_dir.display());
    Ok(())
}
