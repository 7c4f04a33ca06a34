use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gaitforge::experiment::{run_experiment, ExperimentKind, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Walk,
    Moo,
    Discover,
    Incline,
    Curve,
    Primitives,
    Plan,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Walk => ExperimentKind::Walk,
            Experiment::Moo => ExperimentKind::Moo,
            Experiment::Discover => ExperimentKind::Discover,
            Experiment::Incline => ExperimentKind::Incline,
            Experiment::Curve => ExperimentKind::Curve,
            Experiment::Primitives => ExperimentKind::Primitives,
            Experiment::Plan => ExperimentKind::Plan,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Learn hexapod gaits and motor primitives with Bayesian optimization on a
/// surrogate simulator.
#[derive(Debug, Parser)]
#[command(name = "gaitforge", version)]
struct Cli {
    experiment: Experiment,
    /// TOML config file, or a manifest.json from an earlier run to replay it.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed_base: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    noise: Option<Switch>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let overrides = Overrides {
        seed_base: cli.seed_base,
        output_dir: cli.out,
        noise: cli.noise.map(|s| matches!(s, Switch::On)),
    };
    match run_experiment(cli.experiment.into(), &cli.config, &overrides) {
        Ok((resolved, report)) => {
            for line in &report.lines {
                println!("{line}");
            }
            println!(
                "wrote {} files to {}",
                report.files.len(),
                resolved.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
