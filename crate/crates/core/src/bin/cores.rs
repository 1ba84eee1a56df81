use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cores_sieve::cli::{self, RunConfig};
use cores_sieve::Result;

/// CORES² experiment runner. Log level comes from `CORES_LOG` (e.g. `debug`).
#[derive(Parser)]
#[command(name = "cores", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run config: TOML, JSON, or a previous run_report.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one seed, e.g. `--seed-override train=3`. Repeatable.
    #[arg(long = "seed-override", value_name = "KEY=VALUE")]
    seed_override: Vec<String>,
    /// Output directory, replacing `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test CSVs and the noise sidecar.
    Generate(RunArgs),
    /// Run the sieve (and consistency training if enabled) and write reports.
    Train(RunArgs),
    /// Evaluate the decoupling identity and β interval on a world file.
    Oracle {
        #[arg(long, alias = "config")]
        world: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// JSON M×K prediction table; defaults to the noisy posterior.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired runs of two configs over a list of seed offsets.
    Compare {
        #[arg(long, num_args = 2, required = true, value_names = ["A", "B"])]
        config: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long = "seed-override", value_name = "KEY=VALUE")]
        seed_override: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => cli::load_config(path)?,
        None => RunConfig::default(),
    };
    for s in &args.seed_override {
        cfg.apply_seed_override(s)?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: serde::Serialize>(value: &T, out: Option<PathBuf>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(name), text + "\n")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => emit(&cli::cmd_generate(&resolve(&args)?)?, None, ""),
        Command::Train(args) => {
            let report = cli::cmd_train(&resolve(&args)?)?;
            emit(&report.final_report, None, "")
        }
        Command::Oracle { world, beta, predictions, out } => {
            let world = cli::load_world(&world)?;
            let table = predictions
                .map(|p| -> Result<Vec<Vec<f64>>> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) })
                .transpose()?;
            emit(&cli::cmd_oracle(&world, table, beta)?, out, "oracle.json")
        }
        Command::Compare { config, seeds, seed_override, out } => {
            let mut arms = Vec::with_capacity(2);
            for path in &config {
                let mut cfg = cli::load_config(path)?;
                for s in &seed_override {
                    cfg.apply_seed_override(s)?;
                }
                arms.push(cfg);
            }
            emit(&cli::cmd_compare(&arms[0], &arms[1], &seeds)?, out, "compare.json")
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CORES_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.exit_code();
            let body = serde_json::json!({ "error": err.kind(), "message": err.to_string(), "exit_code": code });
            eprintln!("{body}");
            ExitCode::from(code as u8)
        }
    }
}
