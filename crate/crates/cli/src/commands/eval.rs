use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use semalign_core::eval::{
    compare as compare_reports, evaluate, load_paired_images, ClipScoreMetric, DatasetName,
    EvalReport, FeatureStats, MetricClients, MetricName, PromptFormat, StubFid, StubTifa,
};
use semalign_core::refl::{PretrainSource, ProceduralPretrain, PromptCycler};
use semalign_core::rewards::{ScorerBackend, StubClipScorer};
use semalign_core::{Error, Prompt};

use super::generate::parse_format;
use super::{prompts_from_flags, write_json, write_text};
use crate::clients::Clients;
use crate::run::RewardEntry;
use crate::Ctx;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of `.npy` latents, paired through `pairing.json` or by
    /// `<prompt id>.npy`.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<PromptFormat>,
    #[arg(long, value_parser = parse_dataset, default_value = "custom")]
    pub dataset: DatasetName,
    /// Comma-separated subset of clip_score, tifa, fid; `none` for counts only.
    #[arg(long, value_delimiter = ',', default_value = "clip_score,tifa,fid")]
    pub metrics: Vec<String>,
}

fn parse_dataset(s: &str) -> Result<DatasetName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn selected(metrics: &[String]) -> Result<Vec<MetricName>> {
    if metrics.iter().any(|m| m == "none") {
        if metrics.len() > 1 {
            return Err(
                Error::config("metrics", "`none` cannot be combined with other metrics").into(),
            );
        }
        return Ok(Vec::new());
    }
    let mut out: Vec<MetricName> = metrics
        .iter()
        .map(|m| m.parse())
        .collect::<semalign_core::Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn metric_clients(ctx: &Ctx, names: &[MetricName]) -> Result<MetricClients> {
    let stub = ctx.global.stub_clients;
    let clients = Clients::new(&ctx.cfg, stub)?;
    let mut out = MetricClients::none();
    for name in names {
        match name {
            MetricName::ClipScore => out.per_prompt.push(Box::new(ClipScoreMetric::new(
                clients.image_text_scorer(ScorerBackend::Clip)?,
            ))),
            MetricName::Tifa => {
                if !stub {
                    return Err(Error::config(
                        "metrics",
                        "tifa needs a question-answering client, which has no out-of-process backend; pass --stub-clients or drop tifa",
                    )
                    .into());
                }
                out.per_prompt
                    .push(Box::new(StubTifa::new(StubClipScorer::new(
                        ScorerBackend::Clip,
                        ctx.cfg.stubs.encoder_dim,
                    ))));
            }
            MetricName::Fid => {
                let (stats, id) = match &ctx.cfg.eval.fid_reference {
                    Some(path) => (
                        FeatureStats::load(path)
                            .with_context(|| format!("loading FID reference {}", path.display()))?,
                        path.display().to_string(),
                    ),
                    None if stub => (stub_reference(ctx)?, "procedural".to_string()),
                    None => {
                        return Err(Error::config(
                            "eval.fid_reference",
                            "fid needs reference statistics; set eval.fid_reference or pass --stub-clients",
                        )
                        .into())
                    }
                };
                out.per_set.push(Box::new(StubFid::new(stats, &id)));
            }
        }
    }
    Ok(out)
}

/// Reference statistics from procedural "real" images, fixed across runs.
fn stub_reference(ctx: &Ctx) -> Result<FeatureStats> {
    let b = &ctx.cfg.backbone;
    let cycler = PromptCycler::new(vec![Prompt::from_text("reference")?], 0)?;
    let source = ProceduralPretrain::new(cycler, [b.channels, b.height, b.width], 0xfeed);
    let images: Vec<_> = source
        .batch(0, ctx.cfg.stubs.fid_reference_images.max(1))
        .into_iter()
        .map(|(img, _)| img)
        .collect();
    Ok(FeatureStats::from_images(
        &images.iter().collect::<Vec<_>>(),
    )?)
}

pub fn run(ctx: &mut Ctx, args: &EvalArgs) -> Result<()> {
    let set = prompts_from_flags(&[], Some(&args.prompts), args.format, args.dataset)?;
    ctx.run.record.prompts = set.prompts.iter().map(|p| p.text.clone()).collect();
    let clients = metric_clients(ctx, &selected(&args.metrics)?)?;
    let images = load_paired_images(&args.images, &set)?;
    let report = evaluate(&images, &set, &clients, &ctx.run.record.config_hash)?;
    for m in &report.metrics {
        if let Some(v) = m.value {
            ctx.run.record.rewards.push(RewardEntry {
                name: m.metric.to_string(),
                value: v,
                prompt_id: None,
            });
        }
    }
    // wall time goes to the run log so the report files stay reproducible
    ctx.run.record.eval_ms = report.timings.as_ref().map(|t| t.wall_ms);
    print!("{}", report.table());
    let report = report.without_timings();
    write_json(ctx, "eval_report.json", &report)?;
    write_text(ctx, "eval_table.txt", &report.table())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// `LABEL=PATH` of an `eval_report.json`; repeatable.
    #[arg(long = "report", required = true)]
    pub reports: Vec<String>,
}

pub fn compare(ctx: &mut Ctx, args: &CompareArgs) -> Result<()> {
    let mut reports = Vec::new();
    for spec in &args.reports {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::config("report", format!("`{spec}` is not LABEL=PATH")))?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
            locator: format!("{path}:{}", e.line()),
            message: e.to_string(),
        })?;
        reports.push((label.to_string(), report));
    }
    let table = compare_reports(&reports)?;
    write_json(ctx, "comparison.json", &table)?;
    let text = table.render();
    write_text(ctx, "comparison.txt", &text)?;
    print!("{text}");
    Ok(())
}
