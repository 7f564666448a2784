use std::path::Path;
use std::process::Command;

use mimo_waveform::detection::{MonteCarlo, TargetSource};
use mimo_waveform::numerics::c64;
use mimo_waveform::{build_prior, relative_entropy, ComplexMatrix, DetectorSpec, Scenario};
use mimo_waveform_cli::output::PointStatus;
use mimo_waveform_cli::{execute, run, Experiment, ExperimentConfig, RunManifest, WaveformFile};

fn desk_config(experiment: Experiment, sweep: Vec<f64>, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        scenario: Scenario::default().desk_scale(),
        experiment,
        sweep,
        true_doa_deg: 25.0,
        p_fa: 1e-3,
        mc_trials: trials,
        output_path: "unused.csv".into(),
        seed: 2024,
        mm: Default::default(),
    }
}

fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn entropies_vanish_as_energy_goes_to_zero() {
    let c = desk_config(Experiment::EntropyVsEnergy, vec![1e-9, 1e-6, 1.25], 0);
    let r = run(&c).unwrap();
    let robust = r.table.column("d_robust").unwrap();
    let nominal = r.table.column("d_nominal").unwrap();
    assert!(robust[0].abs() < 1e-7 && nominal[0].abs() < 1e-7);
    assert!(robust[1] < robust[2] && nominal[1] < nominal[2]);
    assert!(robust.iter().chain(&nominal).all(|&d| d >= -1e-9));
}

#[test]
fn sweeps_are_byte_deterministic() {
    let cases = [
        desk_config(Experiment::EntropyVsEnergy, vec![0.5, 1.25], 0),
        desk_config(Experiment::PdVsEnergy, vec![0.5, 1.25], 10_000),
        desk_config(Experiment::PdVsNominalDoa, vec![19.0, 31.0], 10_000),
        desk_config(Experiment::SingleDesign, vec![1.25], 0),
    ];
    for c in cases {
        let a = run(&c).unwrap().table.to_csv();
        let b = run(&c).unwrap().table.to_csv();
        assert_eq!(a, b, "{:?}", c.experiment);
    }
}

#[test]
fn every_point_is_reported_once_in_order() {
    let c = desk_config(
        Experiment::PdVsNominalDoa,
        vec![40.0, 10.0, 25.0, 22.0],
        10_000,
    );
    let r = run(&c).unwrap();
    assert_eq!(r.table.rows.len(), 4);
    assert_eq!(r.points.len(), 4);
    for (k, (row, point)) in r.table.rows.iter().zip(&r.points).enumerate() {
        assert_eq!(row.index, k);
        assert_eq!(point.index, k);
        assert_eq!(point.sweep_value, c.sweep[k]);
        assert_eq!(row.values[0], c.sweep[k]);
        assert_eq!(point.status, PointStatus::Ok);
        assert!(point.converged.is_some());
    }
    for col in ["pd_robust", "pd_nominal"] {
        assert!(r
            .table
            .column(col)
            .unwrap()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
    }
    let mismatch = r.table.column("mismatch_deg").unwrap();
    assert_eq!(mismatch, vec![15.0, 15.0, 0.0, 3.0]);
}

#[test]
fn matched_direction_favors_the_nominal_design() {
    let trials = 20_000;
    let c = desk_config(Experiment::PdVsNominalDoa, vec![25.0], trials);
    let r = run(&c).unwrap();
    let pr = r.table.column("pd_robust").unwrap()[0];
    let pn = r.table.column("pd_nominal").unwrap()[0];
    assert!(
        pn >= pr - 2.0 * binomial_sigma(pr, trials),
        "nominal {pn}, robust {pr}"
    );
}

#[test]
fn robust_detection_grows_with_energy() {
    let trials = 20_000;
    let mut c = desk_config(
        Experiment::PdVsEnergy,
        vec![0.25, 0.5, 1.0, 2.0, 4.0],
        trials,
    );
    c.true_doa_deg = 17.0;
    let r = run(&c).unwrap();
    let pd = r.table.column("pd_robust").unwrap();
    for w in pd.windows(2) {
        let sigma =
            (binomial_sigma(w[0], trials).powi(2) + binomial_sigma(w[1], trials).powi(2)).sqrt();
        assert!(w[1] >= w[0] - 3.0 * sigma, "{pd:?}");
    }
    assert!(pd[4] > pd[0]);
}

#[test]
fn zero_waveform_detects_at_the_false_alarm_rate() {
    let s = Scenario::default().desk_scale();
    let prior = build_prior(&s).unwrap();
    let zero = ComplexMatrix::zeros(s.code_length, s.n_t());
    let mut det = DetectorSpec::new(&zero, &prior, 1.0).unwrap();
    let trials = 20_000;
    let gamma = det
        .calibrate_threshold(0.01, trials, MonteCarlo::new(5, 0))
        .unwrap();
    assert_eq!(gamma, 0.0);
    let pd = det
        .detection_probability(TargetSource::Prior(&prior), trials, MonteCarlo::new(5, 1))
        .unwrap();
    // Every statistic is exactly zero, so strict comparison never fires.
    assert!(pd <= 0.01 + 3.0 * binomial_sigma(0.01, trials));
}

#[test]
fn single_design_round_trips_through_the_waveform_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = desk_config(Experiment::SingleDesign, vec![1.25], 0);
    c.output_path = dir.path().join("nested/single.csv").display().to_string();
    let written = execute(&c).unwrap();
    assert_eq!(written.failures, 0);

    let file = WaveformFile::load(written.waveform.as_ref().unwrap()).unwrap();
    let x = file.matrix().unwrap();
    assert!(x.norm_squared() <= 1.25 * (1.0 + 1e-9));
    let prior = build_prior(&Scenario {
        energy_budget: 1.25,
        ..c.scenario.clone()
    })
    .unwrap();
    let d = relative_entropy(&x, &prior, 1.0).unwrap();
    assert!((d - file.relative_entropy).abs() < 1e-12);

    let csv = std::fs::read_to_string(&written.csv).unwrap();
    let objectives: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(objectives.len(), file.iterations + 1);
    assert!(objectives
        .windows(2)
        .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0)));
    assert_eq!(*objectives.last().unwrap(), file.relative_entropy);

    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(&written.manifest).unwrap()).unwrap();
    assert_eq!(manifest.points.len(), 1);
    assert_eq!(manifest.config, c);
}

#[test]
fn failing_points_are_marked_not_fatal() {
    let mut c = desk_config(Experiment::EntropyVsEnergy, vec![0.5, 1.0], 0);
    c.scenario.nominal_amplitude = c64(0.0, 0.0);
    let r = run(&c).unwrap();
    assert_eq!(r.failures(), 2);
    let text = String::from_utf8(r.table.to_csv()).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",NaN,NaN,failed")));
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_waveform-design"))
}

#[test]
fn binary_exit_codes_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let good = write_config(
        dir.path(),
        "good.json",
        r#"{"experiment": "entropy_vs_energy", "sweep": [0.5, 1.25], "seed": 1}"#,
    );
    let status = binary()
        .args(["sweep", "--desk-scale", "--seed", "9", "--out"])
        .arg(&out)
        .arg(&good)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.seed, 9);
    assert_eq!(manifest.config.scenario.code_length, 8);
    let first = std::fs::read(&out).unwrap();

    // Same config and seed through the binary again: identical bytes.
    let status = binary()
        .args(["sweep", "--desk-scale", "--seed", "9", "--out"])
        .arg(&out)
        .arg(&good)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), first);

    let no_seed = write_config(
        dir.path(),
        "bad.json",
        r#"{"experiment": "pd_vs_energy", "sweep": [1]}"#,
    );
    assert_eq!(
        binary()
            .arg("sweep")
            .arg(&no_seed)
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        binary()
            .arg("design")
            .arg(&good)
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        binary()
            .arg("sweep")
            .arg(dir.path().join("missing.json"))
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );

    let broken = write_config(
        dir.path(),
        "broken.json",
        r#"{"experiment": "entropy_vs_energy", "sweep": [1.0], "seed": 1,
            "scenario": {"nominal_amplitude": [0.0, 0.0]}}"#,
    );
    let status = binary()
        .args(["sweep", "--desk-scale", "--out"])
        .arg(dir.path().join("broken.csv"))
        .arg(&broken)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
}
