use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polypaug_cli::stages::{evaluate, generate, review, score, select, train};
use polypaug_cli::{exit_code, with_pool, PipelineConfig, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "polypaug", version, about = "Polyp inpainting augmentation pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Overrides seeds.global.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recompute even when outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic toy corpus and its manifests.
    MakeCorpus,
    /// Train the region-conditioned mask refiner.
    TrainRefiner,
    /// Train the stage-1 segmentation model on real data.
    TrainBaseline,
    /// Place lesions and run the inpainting backends.
    Generate,
    /// Produce refined and initial masks and score every generated image.
    RefineScore,
    /// Select the fine-tuning set.
    Select {
        #[arg(long)]
        label: Option<String>,
        /// Write the four ablation selections instead.
        #[arg(long, conflicts_with = "label")]
        ablation: bool,
    },
    /// Fine-tune the stage-1 model on real plus selected synthetic data.
    Finetune {
        #[arg(long, default_value = "main")]
        label: String,
    },
    /// Evaluate runs on the test split and write report tables.
    Evaluate {
        /// Run labels; `no-aug` is the stage-1 model.
        #[arg(long, value_delimiter = ',')]
        runs: Vec<String>,
    },
    /// Serve the blinded ranking API and frontend.
    ServeReview {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    ShowConfig,
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = &common.work_dir {
        config.paths.work_dir = w.clone();
    }
    if let Some(s) = common.seed {
        config.seeds.global = s;
    }
    if let Some(t) = common.threads {
        config.workers.threads = t;
    }
    config.validate()?;
    Ok(config)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load(&cli.common)?;
    let force = cli.common.force;
    match cli.command {
        Command::ShowConfig => {
            print!("{}", config.to_toml()?);
            Ok(())
        }
        Command::ServeReview { bind, static_dir } => review::serve_review(&config, bind.as_deref(), static_dir),
        command => with_pool(&config, || match command {
            Command::MakeCorpus => print_json(&train::make_corpus(&config)?),
            Command::TrainRefiner => print_json(&train::train_refiner(&config, force)?),
            Command::TrainBaseline => print_json(&train::train_baseline(&config, force)?),
            Command::Generate => print_json(&generate::generate(&config)?),
            Command::RefineScore => print_json(&score::refine_score(&config, force)?),
            Command::Select { label, ablation } => {
                if ablation {
                    print_json(&select::select_ablation(&config)?)
                } else {
                    print_json(&select::select_stage(&config, label.as_deref())?)
                }
            }
            Command::Finetune { label } => print_json(&train::finetune(&config, &label, force)?),
            Command::Evaluate { runs } => {
                let e = evaluate::evaluate(&config, &runs)?;
                print!("{}", evaluate::table2(&e.runs));
                if e.runs.len() > 1 {
                    print!("\n{}", evaluate::table3(&e.runs));
                }
                Ok(())
            }
            Command::ShowConfig | Command::ServeReview { .. } => unreachable!(),
        }),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
