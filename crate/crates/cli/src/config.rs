use std::path::Path;

use mimo_waveform::model::check_angle;
use mimo_waveform::{MmConfig, Scenario};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Monte Carlo trial count used by `--desk-scale`.
pub const DESK_TRIALS: usize = 20_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Relative entropy of both designs against transmit energy.
    EntropyVsEnergy,
    /// Detection probability of both designs against transmit energy.
    PdVsEnergy,
    /// Detection probability against the assumed (nominal) direction.
    PdVsNominalDoa,
    /// One robust design at a single energy, with its iteration trace.
    SingleDesign,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::EntropyVsEnergy => "entropy_vs_energy",
            Experiment::PdVsEnergy => "pd_vs_energy",
            Experiment::PdVsNominalDoa => "pd_vs_nominal_doa",
            Experiment::SingleDesign => "single_design",
        }
    }
}

fn default_true_doa() -> f64 {
    25.0
}

fn default_p_fa() -> f64 {
    1e-3
}

fn default_trials() -> usize {
    100_000
}

fn default_output() -> String {
    "results.csv".into()
}

/// One JSON document describing a run. Only `experiment`, `sweep` and
/// `seed` are required; everything else defaults to the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Scenario,
    pub experiment: Experiment,
    /// Energies for the energy sweeps and `single_design` (exactly one
    /// value), nominal directions in degrees for `pd_vs_nominal_doa`.
    pub sweep: Vec<f64>,
    #[serde(default = "default_true_doa")]
    pub true_doa_deg: f64,
    #[serde(default = "default_p_fa")]
    pub p_fa: f64,
    #[serde(default = "default_trials")]
    pub mc_trials: usize,
    #[serde(default = "default_output")]
    pub output_path: String,
    pub seed: u64,
    #[serde(default)]
    pub mm: MmConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Shrinks the arrays and the trial count for quick runs.
    pub fn desk_scale(mut self) -> Self {
        self.scenario = self.scenario.desk_scale();
        self.mc_trials = DESK_TRIALS;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        self.scenario
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mm
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.scenario.uncertainty_angles_deg.is_empty() {
            return invalid("uncertainty grid is empty".into());
        }
        if self.sweep.is_empty() {
            return invalid("sweep is empty".into());
        }
        if self.sweep.len() > u32::MAX as usize / 2 {
            return invalid("sweep is too long".into());
        }
        check_angle(self.true_doa_deg).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.experiment {
            Experiment::PdVsNominalDoa => {
                for &a in &self.sweep {
                    check_angle(a).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                }
            }
            _ => {
                if let Some(p) = self.sweep.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
                    return invalid(format!("energy {p} is not positive"));
                }
            }
        }
        if self.experiment == Experiment::SingleDesign && self.sweep.len() != 1 {
            return invalid("single_design takes exactly one energy in sweep".into());
        }
        if matches!(
            self.experiment,
            Experiment::PdVsEnergy | Experiment::PdVsNominalDoa
        ) {
            if !(self.p_fa > 0.0 && self.p_fa <= 0.5) {
                return invalid(format!("p_fa = {} outside (0, 0.5]", self.p_fa));
            }
            if (self.mc_trials as f64) * self.p_fa < 10.0 - 1e-9 {
                return invalid(format!("mc_trials = {} is below 10 / p_fa", self.mc_trials));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_reference_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"experiment": "pd_vs_nominal_doa", "sweep": [10, 13], "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(c.scenario, Scenario::default());
        assert_eq!(c.true_doa_deg, 25.0);
        assert_eq!(c.p_fa, 1e-3);
        assert_eq!(c.mc_trials, 100_000);
        assert_eq!(c.mm, MmConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::from_json(r#"{"experiment": "pd_vs_energy", "sweep": [1]}"#);
        assert!(matches!(err, Err(ConfigError::Parse(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{"experiment": "pd_vs_energy", "sweep": [1], "seed": 1, "trials": 5}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn invalid_documents() {
        let base = r#"{"experiment": "pd_vs_energy", "sweep": [1], "seed": 1}"#;
        let ok = ExperimentConfig::from_json(base).unwrap();
        ok.validate().unwrap();

        let mut c = ok.clone();
        c.sweep.clear();
        assert!(c.validate().is_err());

        let mut c = ok.clone();
        c.p_fa = 0.7;
        assert!(c.validate().is_err());

        let mut c = ok.clone();
        c.mc_trials = 9_000;
        assert!(c.validate().is_err());

        let mut c = ok.clone();
        c.sweep = vec![-1.0];
        assert!(c.validate().is_err());

        let mut c = ok.clone();
        c.experiment = Experiment::PdVsNominalDoa;
        c.sweep = vec![95.0];
        assert!(c.validate().is_err());

        let mut c = ok;
        c.experiment = Experiment::SingleDesign;
        c.sweep = vec![1.0, 2.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn desk_preset() {
        let c = ExperimentConfig::from_json(
            r#"{"experiment": "pd_vs_energy", "sweep": [1], "seed": 1}"#,
        )
        .unwrap()
        .desk_scale();
        assert_eq!(
            (c.scenario.n_t(), c.scenario.n_r(), c.scenario.code_length),
            (4, 4, 8)
        );
        assert_eq!(c.mc_trials, DESK_TRIALS);
    }
}
