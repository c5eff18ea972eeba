//! `semalign`: fine-tune, generate, refine, score and evaluate with the toy
//! diffusion backbone.

mod clients;
mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semalign_core::util::config_hash;
use semalign_core::{Error, ErrorClass};

use crate::config::RunConfig;
use crate::run::{RunDir, RunRecord};

#[derive(Parser, Debug)]
#[command(
    name = "semalign",
    version,
    about = "Coarse-to-fine semantic re-alignment for text-to-image diffusion"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Replace every external client with its deterministic stub.
    #[arg(long, global = true)]
    pub stub_clients: bool,
    /// Root for run directories and `runs.jsonl`.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reward feedback fine-tuning; writes checkpoints and a training report.
    Finetune(commands::finetune::FinetuneArgs),
    /// Sample latents for one or more prompts.
    Generate(commands::generate::GenerateArgs),
    /// Annotate a generation and re-sample it with modulated attention.
    Refine(commands::refine::RefineArgs),
    /// Score an image against a prompt with one reward.
    Score(commands::score::ScoreArgs),
    /// Evaluate a generated set against a prompt set.
    Eval(commands::eval::EvalArgs),
    /// Tabulate several evaluation reports side by side.
    Compare(commands::eval::CompareArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Finetune(_) => "finetune",
            Command::Generate(_) => "generate",
            Command::Refine(_) => "refine",
            Command::Score(_) => "score",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
        }
    }
}

/// Shared state handed to every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub global: GlobalArgs,
    pub run: RunDir,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err.chain().find_map(|e| {
        e.downcast_ref::<Error>()
            .map(Error::class)
            .or_else(|| e.downcast_ref::<std::io::Error>().map(|_| ErrorClass::Io))
    });
    match class {
        Some(ErrorClass::Config) => 3,
        Some(ErrorClass::Client) => 4,
        Some(ErrorClass::Numeric) => 5,
        Some(ErrorClass::Io) => 6,
        Some(ErrorClass::Data) => 7,
        None => 1,
    }
}

fn load_config(cli: &mut Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Command::Finetune(args) = &cli.command {
        if let Some(n) = args.max_iterations {
            cfg.refl.max_iterations = n;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, record: &mut Option<RunRecord>) -> anyhow::Result<()> {
    let mut cli = cli;
    let cfg = load_config(&mut cli)?;
    let hash = config_hash(&cfg);
    let run = RunDir::create(
        &cli.global.out_dir,
        &hash,
        RunRecord::new(cli.command.name(), cli.global.seed),
    )?;
    let mut ctx = Ctx {
        cfg,
        global: cli.global.clone(),
        run,
    };
    let result = match &cli.command {
        Command::Finetune(a) => commands::finetune::run(&mut ctx, a),
        Command::Generate(a) => commands::generate::run(&mut ctx, a),
        Command::Refine(a) => commands::refine::run(&mut ctx, a),
        Command::Score(a) => commands::score::run(&mut ctx, a),
        Command::Eval(a) => commands::eval::run(&mut ctx, a),
        Command::Compare(a) => commands::eval::compare(&mut ctx, a),
    };
    *record = Some(ctx.run.finish());
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out_dir = cli.global.out_dir.clone();
    let mut record = None;
    let fallback = RunRecord::new(cli.command.name(), cli.global.seed);
    let outcome = run(cli, &mut record);
    let mut record = record.unwrap_or(fallback);
    let code = match &outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(e)
        }
    };
    record.exit_code = code as i32;
    record.error = outcome.err().map(|e| format!("{e:#}"));
    if let Err(e) = record.append(&out_dir) {
        eprintln!("error: cannot append run record: {e}");
        return ExitCode::from(if code == 0 { 6 } else { code });
    }
    ExitCode::from(code)
}
