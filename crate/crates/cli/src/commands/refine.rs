use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use semalign_core::attnmod::{refine, refine_from, ObjectMass};
use semalign_core::dense_caption::{score_table, AnnotationClients, ObjectAnnotation};
use semalign_core::diffusion::{AttentionTrace, SampleOutput};
use semalign_core::io::{read_latent, write_image_grid, write_latent, write_trace};
use semalign_core::util::digest_str;
use semalign_core::Prompt;

use super::{load_model, write_json};
use crate::clients::Clients;
use crate::Ctx;

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub prompt: String,
    /// Coarse image to annotate (`.npy`); generated from `--seed` when omitted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Overrides `modulation.lambda_0`.
    #[arg(long)]
    pub lambda_0: Option<f64>,
}

#[derive(Serialize)]
struct AnnotationReport<'a> {
    prompt: &'a str,
    tokens: &'a [String],
    scores: Vec<(String, f64)>,
    annotations: &'a [ObjectAnnotation],
    token_owners: Vec<(String, Option<usize>)>,
    masses: Vec<ObjectMass>,
    skipped: Option<&'a str>,
    coarse_digest: String,
    refined_digest: String,
}

pub fn run(ctx: &mut Ctx, args: &RefineArgs) -> Result<()> {
    let prompt = Prompt::from_text(args.prompt.clone())?;
    ctx.run.record.prompts = vec![prompt.text.clone()];
    let mut cfg = ctx.cfg.modulation.clone();
    if let Some(l) = args.lambda_0 {
        cfg.lambda_0 = l;
    }
    let mut model = load_model(ctx, args.checkpoint.as_deref())?;
    let schedule = ctx.cfg.schedule.build()?;
    let clients = Clients::new(&ctx.cfg, ctx.global.stub_clients)?;
    let (tagger, scorer, segmenter) = (
        clients.tagger(&prompt)?,
        clients.llm()?,
        clients.segmenter()?,
    );
    let annotation_clients = AnnotationClients {
        tagger: tagger.as_ref(),
        scorer: scorer.as_ref(),
        segmenter: segmenter.as_ref(),
    };
    let seed = ctx.global.seed;
    let out = match &args.image {
        Some(path) => {
            let coarse = SampleOutput {
                latent: read_latent(path)?,
                trace: AttentionTrace::default(),
            };
            refine_from(
                &mut model,
                &schedule,
                &prompt,
                coarse,
                &annotation_clients,
                clients.cache(),
                &cfg,
                seed,
            )?
        }
        None => refine(
            &mut model,
            &schedule,
            &prompt,
            &annotation_clients,
            clients.cache(),
            &cfg,
            seed,
        )?,
    };

    for (name, latent) in [
        ("coarse.npy", &out.coarse.latent),
        ("refined.npy", &out.refined.latent),
    ] {
        let path = ctx.run.file(name);
        write_latent(&path, latent)?;
        ctx.run.artifact(&path);
    }
    let grid = ctx.run.file("grid.png");
    write_image_grid(
        &grid,
        &[out.coarse.latent.clone(), out.refined.latent.clone()],
        2,
        8,
    )?;
    ctx.run.artifact(&grid);
    for (name, trace) in [
        ("traces/before", &out.coarse.trace),
        ("traces/after", &out.refined.trace),
    ] {
        if trace.is_empty() {
            continue;
        }
        let dir = ctx.run.file(name);
        write_trace(&dir, trace, &out.tokens)?;
        ctx.run.artifact(&dir);
    }

    let scores: Vec<(String, f64)> = score_table(&out.annotations)
        .into_iter()
        .map(|(t, s)| (t, s.value()))
        .collect();
    let report = AnnotationReport {
        prompt: &prompt.text,
        tokens: &out.tokens,
        scores: scores.clone(),
        annotations: &out.annotations,
        token_owners: out
            .tokens
            .iter()
            .cloned()
            .zip(out.ownership.owners().iter().copied())
            .collect(),
        masses: out.object_masses(),
        skipped: out.skipped.as_deref(),
        coarse_digest: out.coarse.latent.digest(),
        refined_digest: out.refined.latent.digest(),
    };
    let ann_json = serde_json::to_string(&out.annotations)?;
    ctx.run.record.annotations_digest = Some(digest_str(&ann_json));
    write_json(ctx, "annotations.json", &report)?;

    println!("prompt: {}", prompt.text);
    for (tag, s) in &scores {
        println!("  {tag:<16} {s}");
    }
    for a in &out.annotations {
        if let Some(w) = &a.warning {
            println!("warning: {}: {w}", a.tag);
        }
    }
    match &out.skipped {
        Some(reason) => println!(
            "notice: refinement skipped ({reason}); the refined image is the coarse generation"
        ),
        None => {
            for m in out.object_masses() {
                println!("  mass {:<16} {:.4} -> {:.4}", m.tag, m.coarse, m.refined);
            }
        }
    }
    println!("outputs in {}", ctx.run.path.display());
    Ok(())
}
