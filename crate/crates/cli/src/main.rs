use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ipslab_cli::verify::Scale;
use ipslab_cli::{cmd_emit_plots, cmd_run, RunOptions, EXIT_CONFIG, EXIT_FAIL, EXIT_PASS};

#[derive(Parser)]
#[command(name = "ipslab", version, about = "Finite-volume entropy experiments for interacting particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run the suites of a config concurrently.
    #[arg(long, global = true)]
    parallel_suites: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites selected in a TOML config.
    Run { config: PathBuf },
    /// Run every acceptance criterion.
    VerifyAll {
        #[arg(long, value_enum, default_value = "small")]
        scale: Scale,
    },
    /// Turn the artifacts of a run into plot-ready CSVs.
    EmitPlots { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot set up {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let code = match cli.command {
        Command::Run { config } => {
            let opts = RunOptions {
                seed: cli.seed,
                out: cli.out,
                parallel_suites: cli.parallel_suites,
                quiet: false,
            };
            let rep = cmd_run(&config, &opts);
            if rep.code != EXIT_CONFIG {
                println!("artifacts in {}", rep.out_dir.display());
            }
            rep.code
        }
        Command::VerifyAll { scale } => {
            let mut all = true;
            for k in 1..=12 {
                let o = ipslab_cli::verify::run_criterion(k, scale, cli.seed.unwrap_or(0));
                println!("{}", o.line());
                all &= o.passed;
            }
            if all {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Command::EmitPlots { dir } => match cmd_emit_plots(&dir, cli.out.as_deref()) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                EXIT_PASS
            }
            Err(e) => {
                eprintln!("emit-plots: {e}");
                EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code)
}
