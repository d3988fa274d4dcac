use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use penn_cli::commands::{self, Preset};
use serde_json::json;

#[derive(Parser)]
#[command(name = "penn", version, about = "Pattern embedded neural networks with missing covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (TOML; JSON or TOML partition file for `certify`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a simulation model and write it as CSV.
    Simulate(Common),
    /// Train and evaluate the configured estimators over seeded repetitions.
    Run(Common),
    /// Run a preset (example1, model1..model4) with scaled split sizes.
    Reproduce {
        preset: Preset,
        /// Multiplier in (0, 1] on the preset split sizes.
        #[arg(long)]
        scale: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize and exhaustively verify a separation certificate.
    Certify(Common),
}

fn required(config: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    config.ok_or_else(|| anyhow::anyhow!("--config is required"))
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&required(c.config)?, c.seed, c.out.as_deref()),
        Command::Run(c) => commands::run(&required(c.config)?, c.seed, c.out.as_deref()),
        Command::Reproduce { preset, scale, common: c } => {
            commands::reproduce(preset, scale, c.config.as_deref(), c.seed, c.out.as_deref())
        }
        Command::Certify(c) => commands::certify(&required(c.config)?, c.seed, c.out.as_deref()),
    }
    .map(|_| ())
}

fn fail(kind: &str, message: String, causes: Vec<String>, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message, "causes": causes } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), Vec::new(), 2),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let causes = e.chain().skip(1).map(|c| c.to_string()).collect();
            fail("runtime", e.to_string(), causes, 1)
        }
    }
}
