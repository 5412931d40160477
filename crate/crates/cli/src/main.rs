use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lookalike_cli::simulate::SimulateOptions;
use lookalike_cli::{embed, expand, oracle, simulate, CliError, CliResult, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "lookalike", version, about = "Lookalike audience expansion on an embedded user base")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `out` in the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed, overriding `seed` in the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed the user base into two dimensions with t-SNE
    Embed,
    /// Expand a seed audience to the top-m users
    Expand {
        /// Newline-delimited seed user ids
        #[arg(long)]
        seeds: PathBuf,
        /// Audience size as a count or a percentage of the user base, e.g. 500 or 10%
        #[arg(long)]
        m: Option<String>,
    },
    /// Run the labelled expansion experiment
    Simulate {
        /// Restrict the experiment to one seed class
        #[arg(long)]
        only_class: Option<u8>,
        /// Also compare against negatives drawn from this class
        #[arg(long)]
        baseline_class: Option<u8>,
    },
    /// Check the posterior identities and classifier agreement
    Oracle,
}

fn load_config(args: &Args) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(args: Args) -> CliResult<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let cfg = load_config(&args)?;
    match &args.command {
        Command::Embed => embed::cmd_embed(&cfg).map(drop),
        Command::Expand { seeds, m } => expand::cmd_expand(&cfg, seeds, m.as_deref()).map(drop),
        Command::Simulate {
            only_class,
            baseline_class,
        } => {
            let opts = SimulateOptions {
                only_class: *only_class,
                baseline_class: *baseline_class,
            };
            simulate::cmd_simulate(&cfg, &opts).map(drop)
        }
        Command::Oracle => oracle::cmd_oracle(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
