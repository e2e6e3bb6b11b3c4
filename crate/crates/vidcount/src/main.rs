use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidcount::commands;
use vidcount::config::RunConfig;
use vidcount::{CliError, Result};

#[derive(Parser)]
#[command(name = "vidcount", version, about = "Count indiscernible objects in short video clips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `data.dataset` for generate and
    /// `data.out` otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its split manifest.
    Generate(Common),
    /// Train on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report MAE / MSE / NAE on a split and write per-frame CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Draw predicted points on every frame of one sequence directory.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
    },
    /// Train and evaluate the {add, concat} x {T=1, T=5} grid.
    Ablate(Common),
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_or(&self, fallback: &std::path::Path) -> PathBuf {
        self.out.clone().unwrap_or_else(|| fallback.to_path_buf())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.load()?;
            commands::generate(&cfg, &c.out_or(&cfg.data.dataset))?;
        }
        Command::Train { common, resume } => {
            let cfg = common.load()?;
            let out = common.out_or(&cfg.data.out);
            let outcome = commands::train(&cfg, &out, resume.as_deref())?;
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Eval { common, checkpoint, split } => {
            let cfg = common.load()?;
            let (report, _) = commands::eval(&cfg, &checkpoint, &split, &common.out_or(&cfg.data.out))?;
            println!("{report}");
        }
        Command::Predict { common, checkpoint, sequence } => {
            let cfg = common.load()?;
            let counts = commands::predict(&cfg, &checkpoint, &sequence, &common.out_or(&cfg.data.out))?;
            println!("frames {} total count {}", counts.len(), counts.iter().sum::<usize>());
        }
        Command::Ablate(c) => {
            let cfg = c.load()?;
            let rows = commands::ablate(&cfg, &c.out_or(&cfg.data.out))?;
            print!("{}", commands::render_ablation(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Config(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.report());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
