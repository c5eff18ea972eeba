use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use semalign_core::diffusion::Denoiser;
use semalign_core::eval::{load_prompt_set, PromptSet};
use semalign_core::refl::{
    train, Checkpoint, ProceduralPretrain, PromptCycler, TrainInputs, TrainReport, TrainState,
};
use semalign_core::rewards::{ChannelTargetReward, DifferentiableReward, SoftCaptionReward};
use semalign_core::{Error, Prompt};

use super::{infer_format, load_model, write_text};
use crate::clients::Clients;
use crate::config::TrainReward;
use crate::run::RewardEntry;
use crate::Ctx;

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Overrides `refl.max_iterations`.
    #[arg(long)]
    pub max_iterations: Option<u64>,
    /// Starts from this checkpoint instead of a fresh backbone.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn dataset(ctx: &Ctx) -> Result<PromptSet> {
    let ds = &ctx.cfg.dataset;
    let set = match &ds.path {
        Some(path) => load_prompt_set(path, infer_format(path, ds.format), ds.name)?,
        None => {
            let prompts = ds
                .prompts
                .iter()
                .map(Prompt::from_text)
                .collect::<semalign_core::Result<Vec<_>>>()?;
            PromptSet::from_prompts(ds.name, prompts)?
        }
    };
    if set.is_empty() {
        return Err(
            Error::config("dataset", "no prompts: set dataset.path or dataset.prompts").into(),
        );
    }
    Ok(set)
}

pub fn run(ctx: &mut Ctx, args: &FinetuneArgs) -> Result<()> {
    let seed = ctx.global.seed;
    let set = dataset(ctx)?;
    let (train_set, test_set) = set.split(ctx.cfg.train.train_fraction, seed)?;
    let train_prompts = if train_set.is_empty() {
        set.prompts.clone()
    } else {
        train_set.prompts
    };
    let mut validation: Vec<Prompt> = if test_set.is_empty() {
        train_prompts.clone()
    } else {
        test_set.prompts
    };
    validation.truncate(ctx.cfg.train.validation_prompts);
    ctx.run.record.prompts = train_prompts.iter().map(|p| p.text.clone()).collect();

    let mut state = match &args.checkpoint {
        Some(path) => Checkpoint::load(path)?.to_state()?,
        None => TrainState::new(
            load_model(ctx, None)?,
            ctx.cfg.refl.learning_rate,
            ctx.cfg.refl.momentum,
            seed,
        ),
    };
    let shape = state.model.latent_shape();
    let schedule = ctx.cfg.schedule.build()?;
    let clients = Clients::new(&ctx.cfg, ctx.global.stub_clients)?;
    let reward: Box<dyn DifferentiableReward> = match ctx.cfg.train.reward {
        TrainReward::CaptionSurrogate => Box::new(SoftCaptionReward::new(
            clients.encoder()?,
            shape[0],
            ctx.cfg.train.surrogate_seed,
        )),
        TrainReward::ChannelTarget => Box::new(ChannelTargetReward::default()),
    };
    let cycler = PromptCycler::new(train_prompts.clone(), seed)?;
    let pretrain = ProceduralPretrain::new(
        PromptCycler::new(train_prompts, seed ^ 0x9e37)?,
        shape,
        seed,
    );
    let config_hash = ctx.run.record.config_hash.clone();
    let inputs = TrainInputs {
        cfg: &ctx.cfg.refl,
        schedule: &schedule,
        reward: reward.as_ref(),
        dataset: &cycler,
        pretrain: &pretrain,
        validation: &validation,
        config_hash: config_hash.clone(),
    };

    let best_path = ctx.run.file("best.ckpt");
    let spec = ctx.cfg.schedule.clone();
    let mut wrote_best = false;
    let report: TrainReport = train(&mut state, &inputs, &mut |s| {
        wrote_best = true;
        Checkpoint::from_state(s, &spec, &config_hash).save(&best_path)
    })?;
    if wrote_best {
        ctx.run.artifact(&best_path);
    }

    let final_path = ctx.run.file("final.ckpt");
    Checkpoint::from_state(&state, &ctx.cfg.schedule, &config_hash).save(&final_path)?;
    ctx.run.artifact(&final_path);
    write_text(ctx, "train_report.jsonl", &report.to_jsonl())?;
    let step_ms: f64 = report.timings.iter().map(|t| t.wall_ms).sum();
    ctx.run.record.train_step_ms = Some(step_ms);

    for v in &report.validations {
        ctx.run.record.rewards.push(RewardEntry {
            name: format!("validation@{}", v.iteration),
            value: v.reward,
            prompt_id: None,
        });
    }
    println!(
        "finetune: {} step(s), final iteration {}, reward {}{}",
        report.steps.len(),
        report.final_iteration,
        reward.name(),
        if report.stopped_early {
            ", stopped early"
        } else {
            ""
        }
    );
    if let Some(v) = report.validations.last() {
        println!(
            "last validation reward {:.6} at iteration {}",
            v.reward, v.iteration
        );
    }
    println!("checkpoint {}", final_path.display());
    Ok(())
}
