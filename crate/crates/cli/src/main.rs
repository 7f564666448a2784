use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mimo_waveform_cli::{execute, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "waveform-design",
    version,
    about = "Robust MIMO radar waveform design experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Shrink to 4x4 arrays, code length 8 and 20000 trials.
    #[arg(long, global = true)]
    desk_scale: bool,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CSV destination; manifest and waveform files are written beside it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single_design config.
    Design { config: PathBuf },
    /// Run an entropy_vs_energy, pd_vs_energy or pd_vs_nominal_doa config.
    Sweep { config: PathBuf },
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let (path, want_design) = match &cli.command {
        Command::Design { config } => (config, true),
        Command::Sweep { config } => (config, false),
    };
    let mut config = ExperimentConfig::load(path)?;
    if (config.experiment == Experiment::SingleDesign) != want_design {
        anyhow::bail!(
            "{} configs are run with `{}`",
            config.experiment.name(),
            if want_design { "sweep" } else { "design" }
        );
    }
    if cli.desk_scale {
        config = config.desk_scale();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_path = out.display().to_string();
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match execute(&config) {
        Ok(w) => {
            println!("{}", w.csv.display());
            println!("{}", w.manifest.display());
            if let Some(p) = &w.waveform {
                println!("{}", p.display());
            }
            if w.failures > 0 {
                eprintln!("{} point(s) failed; see the manifest", w.failures);
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
