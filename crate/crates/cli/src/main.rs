use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ttvd_cli::{cmd_ablate, cmd_render, cmd_run, cmd_sweep, ExperimentSpec, Overrides, Result};

#[derive(Parser)]
#[command(name = "ttvd", version, about = "Voronoi-guided test-time adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt on the synthetic stream; writes trace.csv and summary.json.
    Run(Overrides),
    /// Compare VD, CIVD and CIPD on identical streams; writes ablation.csv.
    Ablate(Overrides),
    /// Vary one axis (--axis, --values); writes sweep.csv.
    Sweep(Overrides),
    /// Draw planar diagrams (needs --feature-dim 2); writes one SVG each.
    Render(Overrides),
}

fn execute(cmd: &Command) -> Result<String> {
    match cmd {
        Command::Run(o) => Ok(cmd_run(&ExperimentSpec::resolve(o)?)?.text()),
        Command::Ablate(o) => Ok(cmd_ablate(&ExperimentSpec::resolve(o)?)?.text()),
        Command::Sweep(o) => Ok(cmd_sweep(&ExperimentSpec::resolve(o)?)?.text()),
        Command::Render(o) => {
            let r = cmd_render(&ExperimentSpec::resolve(o)?)?;
            Ok(r.diagrams
                .iter()
                .map(|d| format!("{}\n", d.file.display()))
                .collect())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
