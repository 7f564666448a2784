use log::info;
use mimo_waveform::detection::{MonteCarlo, TargetSource};
use mimo_waveform::mm::{nominal_design, random_init};
use mimo_waveform::model::{response_vector, snr, stream_rng};
use mimo_waveform::{
    build_prior, optimize, relative_entropy, ComplexMatrix, ComplexVector, DetectorSpec, MmTrace,
    Scenario, TargetPrior,
};
use rayon::prelude::*;

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::output::{PointManifest, PointStatus, Row, Table, WaveformFile};

/// Starting points live on stream ids `(u32::MAX << 32) | index`, which the
/// Monte Carlo substreams (`stream << 32 | chunk`, `stream < u32::MAX`)
/// never reach.
fn init_stream(index: usize) -> u64 {
    (u64::from(u32::MAX) << 32) | index as u64
}

fn calibration_stream(index: usize) -> u32 {
    2 * index as u32
}

fn detection_stream(index: usize) -> u32 {
    2 * index as u32 + 1
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub table: Table,
    pub points: Vec<PointManifest>,
    /// Only for `single_design`.
    pub waveform: Option<WaveformFile>,
}

impl RunResult {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| !p.status.is_ok()).count()
    }
}

struct PointOutcome {
    values: Vec<f64>,
    converged: bool,
    iterations: usize,
}

struct Designs {
    robust: MmTrace,
    nominal: ComplexMatrix,
}

fn design_pair(
    config: &ExperimentConfig,
    scenario: &Scenario,
    prior: &TargetPrior,
    index: usize,
) -> Result<Designs, String> {
    let (l, n_t, budget) = (scenario.code_length, scenario.n_t(), scenario.energy_budget);
    let x0 = random_init(
        l,
        n_t,
        budget,
        &mut stream_rng(config.seed, init_stream(index)),
    );
    let robust = optimize(scenario, prior, &config.mm, Some(&x0)).map_err(|e| e.to_string())?;
    let nominal = nominal_design(&prior.mean_response(), budget, l).map_err(|e| e.to_string())?;
    Ok(Designs { robust, nominal })
}

/// Calibrated threshold and detection rate against a fixed target. Both
/// designs at one point share the same noise and target draws.
fn detection_rate(
    x: &ComplexMatrix,
    prior: &TargetPrior,
    config: &ExperimentConfig,
    h_true: &ComplexVector,
    index: usize,
) -> Result<(f64, f64), String> {
    let mut det =
        DetectorSpec::new(x, prior, config.scenario.noise_power).map_err(|e| e.to_string())?;
    let gamma = det
        .calibrate_threshold(
            config.p_fa,
            config.mc_trials,
            MonteCarlo::new(config.seed, calibration_stream(index)),
        )
        .map_err(|e| e.to_string())?;
    let pd = det
        .detection_probability(
            TargetSource::Fixed(h_true),
            config.mc_trials,
            MonteCarlo::new(config.seed, detection_stream(index)),
        )
        .map_err(|e| e.to_string())?;
    Ok((pd, gamma))
}

fn expect(config: &ExperimentConfig, experiment: Experiment) -> Result<(), ConfigError> {
    if config.experiment != experiment {
        return Err(ConfigError::Invalid(format!(
            "config describes {}, not {}",
            config.experiment.name(),
            experiment.name()
        )));
    }
    config.validate()
}

/// Evaluates every sweep point in parallel and collects rows in sweep order.
fn sweep(
    config: &ExperimentConfig,
    columns: Vec<&'static str>,
    point: impl Fn(usize, f64) -> Result<PointOutcome, String> + Sync,
) -> RunResult {
    let outcomes: Vec<_> = config
        .sweep
        .par_iter()
        .enumerate()
        .map(|(i, &v)| (i, v, point(i, v)))
        .collect();

    let mut table = Table::new(columns);
    let mut points = Vec::with_capacity(outcomes.len());
    for (index, value, outcome) in outcomes {
        let (values, status, converged, iterations) = match outcome {
            Ok(o) => (
                o.values,
                PointStatus::Ok,
                Some(o.converged),
                Some(o.iterations),
            ),
            Err(msg) => {
                log::warn!("point {index} ({value}) failed: {msg}");
                let mut v = vec![f64::NAN; table.columns.len()];
                v[0] = value;
                (v, PointStatus::Failed(msg), None, None)
            }
        };
        table.rows.push(Row {
            index,
            values,
            status: status.clone(),
        });
        points.push(PointManifest {
            index,
            sweep_value: value,
            status,
            converged,
            iterations,
        });
    }
    RunResult {
        table,
        points,
        waveform: None,
    }
}

fn at_energy(config: &ExperimentConfig, energy: f64) -> Scenario {
    Scenario {
        energy_budget: energy,
        ..config.scenario.clone()
    }
}

/// Rows `(energy, d_robust, d_nominal)`; both entropies are measured against
/// the uncertain prior.
pub fn run_entropy_vs_energy(config: &ExperimentConfig) -> Result<RunResult, ConfigError> {
    expect(config, Experiment::EntropyVsEnergy)?;
    let prior = build_prior(&config.scenario).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let sigma2 = config.scenario.noise_power;
    Ok(sweep(
        config,
        vec!["energy", "d_robust", "d_nominal"],
        |i, energy| {
            let scenario = at_energy(config, energy);
            let d = design_pair(config, &scenario, &prior, i)?;
            let d_robust =
                relative_entropy(d.robust.waveform(), &prior, sigma2).map_err(|e| e.to_string())?;
            let d_nominal =
                relative_entropy(&d.nominal, &prior, sigma2).map_err(|e| e.to_string())?;
            info!("P_t = {energy}: D robust {d_robust:.6}, nominal {d_nominal:.6}");
            Ok(PointOutcome {
                values: vec![energy, d_robust, d_nominal],
                converged: d.robust.converged,
                iterations: d.robust.iterations_used,
            })
        },
    ))
}

/// Rows `(energy, pd_robust, pd_nominal, gamma_robust, gamma_nominal)`
/// against a fixed target at the true direction.
pub fn run_pd_vs_energy(config: &ExperimentConfig) -> Result<RunResult, ConfigError> {
    expect(config, Experiment::PdVsEnergy)?;
    let prior = build_prior(&config.scenario).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let s = &config.scenario;
    let h_true = response_vector(s.nominal_amplitude, config.true_doa_deg, s);
    let columns = vec![
        "energy",
        "pd_robust",
        "pd_nominal",
        "gamma_robust",
        "gamma_nominal",
    ];
    Ok(sweep(config, columns, |i, energy| {
        let scenario = at_energy(config, energy);
        let d = design_pair(config, &scenario, &prior, i)?;
        let (pd_r, gamma_r) = detection_rate(d.robust.waveform(), &prior, config, &h_true, i)?;
        let (pd_n, gamma_n) = detection_rate(&d.nominal, &prior, config, &h_true, i)?;
        info!("P_t = {energy}: Pd robust {pd_r:.4}, nominal {pd_n:.4}");
        Ok(PointOutcome {
            values: vec![energy, pd_r, pd_n, gamma_r, gamma_n],
            converged: d.robust.converged,
            iterations: d.robust.iterations_used,
        })
    }))
}

/// Rows `(nominal_doa, mismatch, pd_robust, pd_nominal, gamma_robust,
/// gamma_nominal)`; the prior moves with the nominal direction while the
/// target stays at the true direction.
pub fn run_pd_vs_nominal_doa(config: &ExperimentConfig) -> Result<RunResult, ConfigError> {
    expect(config, Experiment::PdVsNominalDoa)?;
    let s = &config.scenario;
    let h_true = response_vector(s.nominal_amplitude, config.true_doa_deg, s);
    let columns = vec![
        "nominal_doa_deg",
        "mismatch_deg",
        "pd_robust",
        "pd_nominal",
        "gamma_robust",
        "gamma_nominal",
    ];
    Ok(sweep(config, columns, |i, theta| {
        let scenario = Scenario {
            nominal_doa_deg: theta,
            ..config.scenario.clone()
        };
        let prior = build_prior(&scenario).map_err(|e| e.to_string())?;
        let d = design_pair(config, &scenario, &prior, i)?;
        let (pd_r, gamma_r) = detection_rate(d.robust.waveform(), &prior, config, &h_true, i)?;
        let (pd_n, gamma_n) = detection_rate(&d.nominal, &prior, config, &h_true, i)?;
        info!("θ_d = {theta}: Pd robust {pd_r:.4}, nominal {pd_n:.4}");
        Ok(PointOutcome {
            values: vec![
                theta,
                (theta - config.true_doa_deg).abs(),
                pd_r,
                pd_n,
                gamma_r,
                gamma_n,
            ],
            converged: d.robust.converged,
            iterations: d.robust.iterations_used,
        })
    }))
}

/// One robust design. The table is the iteration trace
/// `(objective, energy, multiplier)`; the waveform itself goes to
/// [`RunResult::waveform`].
pub fn run_single_design(config: &ExperimentConfig) -> Result<RunResult, ConfigError> {
    expect(config, Experiment::SingleDesign)?;
    let energy = config.sweep[0];
    let scenario = at_energy(config, energy);
    let prior = build_prior(&scenario).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let sigma2 = scenario.noise_power;
    let mut table = Table::new(vec!["objective", "energy", "multiplier"]);

    let outcome = design_pair(config, &scenario, &prior, 0).and_then(|d| {
        let x = d.robust.waveform();
        let entropy = relative_entropy(x, &prior, sigma2).map_err(|e| e.to_string())?;
        let (rows, cols, data) = WaveformFile::pack(x);
        let file = WaveformFile {
            rows,
            cols,
            data,
            relative_entropy: entropy,
            snr: snr(x, &prior.mean_response(), sigma2),
            energy: x.norm_squared(),
            converged: d.robust.converged,
            iterations: d.robust.iterations_used,
        };
        Ok((d.robust, file))
    });

    let (status, converged, iterations, waveform) = match outcome {
        Ok((trace, file)) => {
            for (k, it) in trace.iterates.iter().enumerate() {
                table.rows.push(Row {
                    index: k,
                    values: vec![it.objective, it.energy, it.multiplier],
                    status: PointStatus::Ok,
                });
            }
            (
                PointStatus::Ok,
                Some(trace.converged),
                Some(trace.iterations_used),
                Some(file),
            )
        }
        Err(msg) => {
            table.rows.push(Row {
                index: 0,
                values: vec![f64::NAN; 3],
                status: PointStatus::Failed(msg.clone()),
            });
            (PointStatus::Failed(msg), None, None, None)
        }
    };
    Ok(RunResult {
        table,
        points: vec![PointManifest {
            index: 0,
            sweep_value: energy,
            status,
            converged,
            iterations,
        }],
        waveform,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<RunResult, ConfigError> {
    match config.experiment {
        Experiment::EntropyVsEnergy => run_entropy_vs_energy(config),
        Experiment::PdVsEnergy => run_pd_vs_energy(config),
        Experiment::PdVsNominalDoa => run_pd_vs_nominal_doa(config),
        Experiment::SingleDesign => run_single_design(config),
    }
}
