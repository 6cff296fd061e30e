use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use difflab_cli::{bundled, load_scenario, render, run, CliError, LoadedScenario, RunOptions, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "difflab", version, about = "Exact-score diffusion experiments")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled scenario; outputs go under $DIFFLAB_OUTPUT_ROOT.
    Run { config: String },
    /// Render an entropy-profile CSV or fixed-point-tree JSON as SVG.
    Render {
        input: PathBuf,
        output: PathBuf,
        /// Comma-separated projection direction for trees with more than two dimensions.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
    },
    /// List the bundled scenarios.
    ListScenarios,
    /// Check a scenario without running it.
    Validate { config: String },
}

fn load(config: &str) -> Result<LoadedScenario, CliError> {
    let path = Path::new(config);
    if !path.is_file() {
        if let Some(text) = bundled::bundled(config) {
            return load_scenario(text, Path::new("."));
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("reading {config}: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    load_scenario(&text, base)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("configuring threads: {e}")))?;
    }
    match cli.command {
        Command::Run { config } => {
            let loaded = load(&config)?;
            let out_root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("difflab-out"));
            let report = run(&loaded, &RunOptions { out_root })?;
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Render {
            input,
            output,
            direction,
        } => {
            render::render(&input, &output, direction.as_deref())?;
            println!("wrote {}", output.display());
        }
        Command::ListScenarios => {
            for name in bundled::names() {
                let text = bundled::bundled(name).unwrap_or_default();
                let description = load_scenario(text, Path::new("."))
                    .ok()
                    .and_then(|l| l.scenario.description)
                    .unwrap_or_default();
                println!("{name:<20} {description}");
            }
        }
        Command::Validate { config } => {
            let loaded = load(&config)?;
            println!(
                "ok: {} ({} outputs, config sha256 {})",
                loaded.scenario.name,
                loaded.scenario.outputs.len(),
                loaded.config_hash()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
