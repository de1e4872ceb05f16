mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use monet::ModelVariant;

use crate::commands::{parse_variant, EvalRequest};
use crate::config::{EvalWorlds, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "monet", version, about = "Train, decode and evaluate modular driving policies")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment configuration (TOML); unset keys take profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; falls back to the config file, then MONET_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker pool (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Drive the scripted expert and write a demonstration dataset.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        worlds: Option<usize>,
        #[arg(long)]
        episodes_per_world: Option<usize>,
    },
    /// Train a policy on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ModelVariant>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda_lgc: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Fit the task decoder on a checkpoint's latent decisions.
    FitDecoder {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
        /// Keep SI as its own class instead of merging it into ST.
        #[arg(long)]
        no_merge_si: bool,
        /// SVM regularization weight.
        #[arg(long)]
        c: Option<f64>,
    },
    /// Similarity matrices, learning curves, saliency and closed-loop rollouts.
    Eval(EvalArgs),
    /// Bundle a run's metrics and eval outputs into a markdown report.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Decoder JSON for rollouts; fitted on the dataset when omitted.
    #[arg(long)]
    decoder: Option<PathBuf>,
    /// Run directory for --curve (inferred from the checkpoint path).
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    rsm: bool,
    #[arg(long)]
    curve: bool,
    #[arg(long)]
    rollout: bool,
    /// Dataset sample index to render a saliency map for.
    #[arg(long, value_name = "INDEX")]
    saliency: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum)]
    worlds: Option<EvalWorlds>,
    #[arg(long)]
    no_merge_si: bool,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.global.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg: ExperimentConfig = config::load(cli.global.config.as_deref(), cli.global.seed)?;
    match cli.command {
        Command::GenerateData {
            out,
            worlds,
            episodes_per_world,
        } => {
            if let Some(w) = worlds {
                cfg.dataset.worlds = w;
            }
            if let Some(e) = episodes_per_world {
                cfg.dataset.episodes_per_world = e;
            }
            cfg.validate()?;
            commands::generate_data(&cfg, &out)
        }
        Command::Train {
            dataset,
            out,
            variant,
            iterations,
            batch_size,
            lr,
            lambda_lgc,
            kappa,
            checkpoint_every,
        } => {
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(n) = iterations {
                cfg.training.total_iterations = n;
            }
            if let Some(b) = batch_size {
                cfg.training.batch_size = b;
            }
            if let Some(v) = lr {
                cfg.training.learning_rate = v;
            }
            if let Some(v) = lambda_lgc {
                cfg.loss.lambda_lgc = v;
            }
            if let Some(v) = kappa {
                cfg.loss.kappa = v;
            }
            if let Some(v) = checkpoint_every {
                cfg.training.checkpoint_every = v;
            }
            cfg.validate()?;
            commands::train_cmd(&cfg, &dataset, &out)
        }
        Command::FitDecoder {
            checkpoint,
            dataset,
            out,
            no_merge_si,
            c,
        } => {
            if no_merge_si {
                cfg.decoder.merge_si = false;
            }
            if let Some(c) = c {
                cfg.decoder.c = c;
            }
            cfg.validate()?;
            commands::fit_decoder(&cfg, &checkpoint, &dataset, &out)
        }
        Command::Eval(a) => {
            if let Some(n) = a.episodes {
                cfg.eval.episodes = n;
            }
            if let Some(w) = a.worlds {
                cfg.eval.worlds = w;
            }
            if a.no_merge_si {
                cfg.decoder.merge_si = false;
                cfg.eval.decisions.merge_si = false;
            }
            cfg.validate()?;
            let req = EvalRequest {
                rsm: a.rsm,
                curve: a.curve,
                rollout: a.rollout,
                saliency: a.saliency,
                dataset: a.dataset,
                decoder: a.decoder,
                run: a.run,
            };
            commands::eval(&cfg, &a.checkpoint, &a.out, &req)
        }
        Command::Report { run, eval, out } => commands::report(&run, eval.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
