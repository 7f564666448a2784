#![allow(dead_code)]

use mimo_waveform::model::{build_prior, ArrayGeometry};
use mimo_waveform::numerics::c64;
use mimo_waveform::{ComplexMatrix, Scenario, TargetPrior};
use rand::Rng;

/// N_T = N_R = 4, L = 8 with the default array spacings and grid.
pub fn desk(noise_power: f64, energy_budget: f64) -> (Scenario, TargetPrior) {
    let s = Scenario {
        noise_power,
        energy_budget,
        ..Scenario::default().desk_scale()
    };
    let prior = build_prior(&s).unwrap();
    (s, prior)
}

pub fn small(n_t: usize, n_r: usize, l: usize) -> (Scenario, TargetPrior) {
    let s = Scenario {
        tx: ArrayGeometry::new(n_t, 2.0).unwrap(),
        rx: ArrayGeometry::new(n_r, 0.5).unwrap(),
        code_length: l,
        uncertainty_angles_deg: vec![-35.0, -5.0, 10.0, 40.0],
        uncertainty_power: 0.2,
        ..Scenario::default()
    };
    let prior = build_prior(&s).unwrap();
    (s, prior)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Random waveform with energy uniform on `[0, budget]`.
pub fn random_feasible(rng: &mut impl Rng, l: usize, n_t: usize, budget: f64) -> ComplexMatrix {
    let x = gaussian_matrix(rng, l, n_t);
    let energy = budget * rng.gen_range(0.0..1.0f64);
    x.clone() * c64((energy / x.norm_squared()).sqrt(), 0.0)
}
