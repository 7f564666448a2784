//! Experiment driver: JSON configs in, CSV tables and JSON manifests out.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use experiments::{
    run, run_entropy_vs_energy, run_pd_vs_energy, run_pd_vs_nominal_doa, run_single_design,
    RunResult,
};
pub use output::{RunManifest, Table, WaveformFile};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Files written by [`execute`].
#[derive(Debug, Clone)]
pub struct Written {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub waveform: Option<PathBuf>,
    pub failures: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecuteError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ExecuteError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| ExecuteError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| ExecuteError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Runs the configured experiment and writes the CSV at
/// `config.output_path` plus its manifest (and waveform) next to it.
pub fn execute(config: &ExperimentConfig) -> Result<Written, ExecuteError> {
    let start = Instant::now();
    let result = run(config)?;
    let elapsed = start.elapsed().as_secs_f64();

    let csv = PathBuf::from(&config.output_path);
    write(&csv, &result.table.to_csv())?;

    let manifest = RunManifest {
        tool_version: VERSION.into(),
        experiment: config.experiment.name().into(),
        seed: config.seed,
        config: config.clone(),
        wall_clock_seconds: elapsed,
        points: result.points.clone(),
    };
    let manifest_path = output::manifest_path(&csv);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain data");
    write(&manifest_path, text.as_bytes())?;

    let waveform = match &result.waveform {
        Some(w) => {
            let path = output::waveform_path(&csv);
            let text = serde_json::to_string_pretty(w).expect("waveform is plain data");
            write(&path, text.as_bytes())?;
            Some(path)
        }
        None => None,
    };

    Ok(Written {
        csv,
        manifest: manifest_path,
        waveform,
        failures: result.failures(),
    })
}
