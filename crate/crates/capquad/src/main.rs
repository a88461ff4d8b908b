use capquad::error::Result;
use capquad::runner::{run_suite, RunOptions};
use capquad::scenario::{builtin_suite, explain, list_text, SuiteConfig};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "capquad",
    about = "Grid capacity experiments: quasiadditivity, distance-mass, and weighted-inequality constants across refinement ladders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a suite and emit CSV/JSON reports.
    Run {
        /// Suite JSON; defaults to the built-in scenarios.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (created if missing).
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Worker threads; 0 = one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Override the suite seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Skip grid levels with more nodes per side than this.
        #[arg(long)]
        grid_max: Option<usize>,
    },
    /// Describe a scenario and every column it emits.
    Explain { name: String },
    /// List built-in scenarios.
    List,
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed,
            scenario,
            grid_max,
        } => {
            let suite = match config {
                Some(path) => SuiteConfig::from_json(&std::fs::read_to_string(path)?)?,
                None => builtin_suite(),
            };
            let opts = RunOptions {
                out,
                jobs,
                seed,
                filter: scenario,
                grid_max,
            };
            let outcome = run_suite(&suite, &opts)?;
            for r in &outcome.manifest.runs {
                println!(
                    "{:<16} p={:<5} consensus={:<12} {}",
                    r.scenario,
                    r.p,
                    format!("{:?}", r.consensus).to_lowercase(),
                    r.status
                );
            }
            println!(
                "wrote {} (manifest.json, verdicts.csv, per-cell reports)",
                outcome.out_dir.display()
            );
            Ok(if outcome.manifest.all_expectations_met {
                0
            } else {
                1
            })
        }
        Command::Explain { name } => {
            print!("{}", explain(&name)?);
            Ok(0)
        }
        Command::List => {
            print!("{}", list_text());
            Ok(0)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("capquad: {e}");
            std::process::exit(2);
        }
    }
}
