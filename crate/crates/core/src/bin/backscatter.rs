use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use backscatter::cli::{cmd_forward, cmd_invert, cmd_stability, cmd_verify, CliError, CliResult, RunConfig, Suite, VerifyOptions};

#[derive(Parser)]
#[command(name = "backscatter", version, about = "Point-source backscattering: forward data, reconstruction and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic backscattering data for the configured potential
    Forward,
    /// Layer-stripping reconstruction from a data CSV (with JSON sidecar)
    Invert {
        /// data CSV; defaults to the configured data file in --out
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run one invariant suite
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        /// use a mis-signed Lorentz form (the kernel suite must fail)
        #[arg(long, hide = true)]
        mutate: bool,
    },
    /// Noise sweep and stability report
    Stability,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let written = match cli.command {
        Command::Forward => cmd_forward(&cfg, &cli.out)?,
        Command::Invert { data } => cmd_invert(&cfg, &cli.out, data.as_deref())?,
        Command::Stability => cmd_stability(&cfg, &cli.out)?,
        Command::Verify { suite, mutate } => {
            cmd_verify(suite, VerifyOptions { seed: cfg.seed, mis_signed_kernel: mutate })?;
            Vec::new()
        }
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Verification(failures) = &e {
                for f in failures {
                    eprintln!("{}", serde_json::to_string(f).unwrap_or_default());
                }
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
