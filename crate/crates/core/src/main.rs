use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use locsynth::experiment::{self, ExperimentConfig};
use locsynth::{Error, Result};

#[derive(Parser)]
#[command(name = "locsynth", version, about = "Synthetic-variant retrieval training and localization")]
struct Cli {
    /// TOML config; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world.
    Worldgen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render variants of every map view and score every matching pair.
    Variants {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed plus their average.
    Train {
        #[arg(long)]
        world: PathBuf,
        /// Required unless train.mode is baseline.
        #[arg(long)]
        variants: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve, localize and summarize.
    Evaluate {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full ablation grid.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the reference configuration, or the effective one with --config.
    Config,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} directory {} does not exist", path.display())))
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Worldgen { out } => {
            let world = experiment::cmd_worldgen(&cfg, out)?;
            eprintln!(
                "world: {} landmarks, {} map views, {} queries, {} matching pairs",
                world.landmarks.len(),
                world.map_views.len(),
                world.query_views.len(),
                world.matching_pairs.len()
            );
        }
        Command::Variants { world, out } => {
            require_dir(world, "world")?;
            let (prompts, _, scores) = experiment::cmd_variants(&cfg, world, out)?;
            let valid = scores.valid_keys(&cfg.threshold()).len();
            eprintln!(
                "variants: {} prompts, {} scored pairs, {} valid",
                prompts.names().len(),
                scores.scores.len(),
                valid
            );
        }
        Command::Train { world, variants, out } => {
            require_dir(world, "world")?;
            let runs = experiment::cmd_train(&cfg, world, variants.as_deref(), out)?;
            for (seed, run) in &runs {
                if let Some(last) = run.trace.last() {
                    eprintln!("seed {seed}: final loss {:.4}", last.mean_loss);
                }
            }
        }
        Command::Evaluate { world, model, out } => {
            require_dir(world, "world")?;
            let ev = experiment::cmd_evaluate(&cfg, world, model, out)?;
            for row in &ev.summary {
                let rates: Vec<String> = row.rates.iter().map(|r| format!("{r:.2}")).collect();
                eprintln!("{:<8} {} k={:<3} {}", row.group, row.protocol.name(), row.k, rates.join(" / "));
            }
        }
        Command::Ablate { out } => {
            experiment::cmd_ablate(&cfg, out)?;
            eprintln!("wrote {}", out.join(experiment::ABLATION).display());
        }
        Command::Config => match &cli.config {
            Some(_) => print!(
                "{}",
                toml::to_string_pretty(&cfg).map_err(|e| Error::Config(e.to_string()))?
            ),
            None => print!("{}", ExperimentConfig::reference()),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
