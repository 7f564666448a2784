//! Scenario description, steering vectors, the Gaussian target prior and the
//! sampling routines used by the Monte Carlo harness.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    c64, herm_eig, hermitian_residual, kron, psd_sqrt, unvec, vec, ComplexMatrix, ComplexVector,
    LinalgError, C64,
};

/// Generator used for every random draw in the crate.
pub type McRng = ChaCha8Rng;

/// Deterministic substream `(seed, stream)`. Streams with different ids are
/// independent and do not depend on how work is scheduled across threads.
pub fn stream_rng(seed: u64, stream: u64) -> McRng {
    let mut rng = McRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid target prior: {0}")]
    InvalidPrior(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Uniform linear array with element spacing given in carrier wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_elements: usize,
    pub spacing_wavelengths: f64,
}

impl ArrayGeometry {
    pub fn new(n_elements: usize, spacing_wavelengths: f64) -> Result<Self, ModelError> {
        let g = ArrayGeometry {
            n_elements,
            spacing_wavelengths,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_elements == 0 {
            return Err(ModelError::InvalidScenario(
                "array needs at least one element".into(),
            ));
        }
        if !(self.spacing_wavelengths > 0.0 && self.spacing_wavelengths.is_finite()) {
            return Err(ModelError::InvalidScenario(format!(
                "element spacing must be positive, got {}",
                self.spacing_wavelengths
            )));
        }
        Ok(())
    }

    /// Steering vector with phase reference at element 0:
    /// entry `m` is `exp(j·2π·m·d·sin θ)`.
    pub fn steering(&self, theta_deg: f64) -> ComplexVector {
        let phase_step = 2.0 * PI * self.spacing_wavelengths * theta_deg.to_radians().sin();
        ComplexVector::from_fn(self.n_elements, |m, _| {
            Complex64::from_polar(1.0, phase_step * m as f64)
        })
    }
}

/// `count` angles from `start` in steps of `step` degrees.
pub fn uniform_grid(start_deg: f64, step_deg: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| start_deg + step_deg * i as f64)
        .collect()
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub code_length: usize,
    pub noise_power: f64,
    pub energy_budget: f64,
    pub nominal_doa_deg: f64,
    pub nominal_amplitude: C64,
    pub uncertainty_angles_deg: Vec<f64>,
    pub uncertainty_power: f64,
    pub seed: u64,
}

impl Default for Scenario {
    /// Six-by-six colocated array at the reference operating point.
    fn default() -> Self {
        Scenario {
            tx: ArrayGeometry {
                n_elements: 6,
                spacing_wavelengths: 2.0,
            },
            rx: ArrayGeometry {
                n_elements: 6,
                spacing_wavelengths: 0.5,
            },
            code_length: 20,
            noise_power: 1.0,
            energy_budget: 1.25,
            nominal_doa_deg: 15.0,
            nominal_amplitude: c64(1.5f64.sqrt(), 0.0),
            uncertainty_angles_deg: uniform_grid(-60.0, 4.0, 30),
            uncertainty_power: 0.05,
            seed: 0,
        }
    }
}

impl Scenario {
    /// Reduced geometry (4 x 4 elements, code length 8) for quick runs.
    pub fn desk_scale(mut self) -> Self {
        self.tx.n_elements = 4;
        self.rx.n_elements = 4;
        self.code_length = 8;
        self
    }

    pub fn n_t(&self) -> usize {
        self.tx.n_elements
    }

    pub fn n_r(&self) -> usize {
        self.rx.n_elements
    }

    /// `N_T·N_R`, the length of the target response vector.
    pub fn n_tr(&self) -> usize {
        self.n_t() * self.n_r()
    }

    /// `L·N_R`, the length of the received vector.
    pub fn n_rl(&self) -> usize {
        self.code_length * self.n_r()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.tx.validate()?;
        self.rx.validate()?;
        if self.code_length == 0 {
            return Err(ModelError::InvalidScenario(
                "code length must be at least 1".into(),
            ));
        }
        if !(self.noise_power > 0.0) {
            return Err(ModelError::InvalidScenario(
                "noise power must be positive".into(),
            ));
        }
        if !(self.energy_budget > 0.0) {
            return Err(ModelError::InvalidScenario(
                "energy budget must be positive".into(),
            ));
        }
        if !(self.uncertainty_power >= 0.0) {
            return Err(ModelError::InvalidScenario(
                "uncertainty power must be nonnegative".into(),
            ));
        }
        let angles = std::iter::once(&self.nominal_doa_deg).chain(&self.uncertainty_angles_deg);
        for &a in angles {
            check_angle(a)?;
        }
        Ok(())
    }
}

pub fn check_angle(theta_deg: f64) -> Result<(), ModelError> {
    if (-90.0..=90.0).contains(&theta_deg) {
        Ok(())
    } else {
        Err(ModelError::InvalidScenario(format!(
            "angle {theta_deg} deg outside [-90, 90]"
        )))
    }
}

/// `H = Σ α·a(θ)·b(θ)ᵀ` (plain transpose), an `N_T × N_R` matrix.
pub fn response_matrix(targets: &[(C64, f64)], scenario: &Scenario) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(scenario.n_t(), scenario.n_r());
    for &(alpha, theta) in targets {
        let a = scenario.tx.steering(theta);
        let b = scenario.rx.steering(theta);
        h += (a * b.transpose()) * alpha;
    }
    h
}

/// `vec` of the single-target response, `α·(b(θ) ⊗ a(θ))`.
pub fn response_vector(alpha: C64, theta_deg: f64, scenario: &Scenario) -> ComplexVector {
    let a = scenario.tx.steering(theta_deg);
    let b = scenario.rx.steering(theta_deg);
    let k = kron(&as_column(&b), &as_column(&a)) * alpha;
    ComplexVector::from_column_slice(k.as_slice())
}

fn as_column(v: &ComplexVector) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Mean and covariance of the Gaussian target response `h = vec(H)`.
#[derive(Debug, Clone)]
pub struct TargetPrior {
    mean: ComplexVector,
    covariance: ComplexMatrix,
    covariance_sqrt: ComplexMatrix,
    n_t: usize,
    n_r: usize,
}

impl TargetPrior {
    /// Validates the covariance (Hermitian, PSD) and caches its square root.
    pub fn new(
        mean: ComplexVector,
        covariance: ComplexMatrix,
        n_t: usize,
        n_r: usize,
    ) -> Result<Self, ModelError> {
        let n = n_t * n_r;
        if mean.len() != n || covariance.shape() != (n, n) {
            return Err(ModelError::InvalidPrior(format!(
                "expected mean of length {n} and {n}x{n} covariance"
            )));
        }
        let residual = hermitian_residual(&covariance);
        if covariance.norm() > 0.0 && residual > 1e-10 {
            return Err(ModelError::InvalidPrior(format!(
                "covariance not Hermitian (residual {residual:.3e})"
            )));
        }
        let min = herm_eig(&covariance)?.min_eigenvalue();
        if min < -1e-10 * covariance.norm() {
            return Err(ModelError::InvalidPrior(format!(
                "covariance not PSD (eigenvalue {min:.3e})"
            )));
        }
        let covariance_sqrt = psd_sqrt(&covariance)?;
        Ok(TargetPrior {
            mean,
            covariance,
            covariance_sqrt,
            n_t,
            n_r,
        })
    }

    pub fn mean(&self) -> &ComplexVector {
        &self.mean
    }

    pub fn covariance(&self) -> &ComplexMatrix {
        &self.covariance
    }

    pub fn covariance_sqrt(&self) -> &ComplexMatrix {
        &self.covariance_sqrt
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    /// Mean response reshaped to the `N_T × N_R` matrix `H_d`.
    pub fn mean_response(&self) -> ComplexMatrix {
        unvec(&self.mean, self.n_t, self.n_r).expect("mean length checked at construction")
    }
}

/// Prior for the nominal target with grid-based uncertainty:
/// `h_d = α_d·(b(θ_d) ⊗ a(θ_d))` and
/// `R_H = Σ_k σ_r²·(b(θ_k)b(θ_k)†) ⊗ (a(θ_k)a(θ_k)†)`.
pub fn build_prior(scenario: &Scenario) -> Result<TargetPrior, ModelError> {
    scenario.validate()?;
    if scenario.uncertainty_angles_deg.is_empty() {
        return Err(ModelError::InvalidScenario(
            "uncertainty grid is empty".into(),
        ));
    }
    let mean = response_vector(
        scenario.nominal_amplitude,
        scenario.nominal_doa_deg,
        scenario,
    );
    let n = scenario.n_tr();
    let mut covariance = ComplexMatrix::zeros(n, n);
    for &theta in &scenario.uncertainty_angles_deg {
        // (b b†) ⊗ (a a†) = (b ⊗ a)(b ⊗ a)†
        let v = response_vector(c64(1.0, 0.0), theta, scenario);
        covariance += &v * v.adjoint();
    }
    covariance *= c64(scenario.uncertainty_power, 0.0);
    TargetPrior::new(mean, covariance, scenario.n_t(), scenario.n_r())
}

/// `tr(X·H·H†·X†) / (L·N_R·σ²)`.
pub fn snr(x: &ComplexMatrix, h: &ComplexMatrix, noise_power: f64) -> f64 {
    let xh = x * h;
    xh.norm_squared() / (x.nrows() as f64 * h.ncols() as f64 * noise_power)
}

/// One draw of circularly-symmetric unit-variance complex Gaussian entries.
fn standard_complex(dim: usize, rng: &mut impl Rng) -> ComplexVector {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    ComplexVector::from_fn(dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64(re * scale, im * scale)
    })
}

/// `h = h_d + R_H^{1/2}·g` with `g` standard circular complex Gaussian.
pub fn sample_target(prior: &TargetPrior, rng: &mut impl Rng) -> ComplexVector {
    let g = standard_complex(prior.mean.len(), rng);
    &prior.mean + &prior.covariance_sqrt * g
}

/// White circular complex Gaussian noise with `E|n_i|² = σ²`.
pub fn sample_noise(dim: usize, noise_power: f64, rng: &mut impl Rng) -> ComplexVector {
    standard_complex(dim, rng) * c64(noise_power.sqrt(), 0.0)
}

/// `y = (I_{N_R} ⊗ X)·h + n`, computed as `vec(X·H) + n`.
pub fn received(
    x: &ComplexMatrix,
    h: &ComplexVector,
    noise: &ComplexVector,
) -> Result<ComplexVector, ModelError> {
    Ok(signal(x, h)? + noise_checked(x, h, noise)?)
}

/// Noise-free part of [`received`], `X̃·h`.
pub fn signal(x: &ComplexMatrix, h: &ComplexVector) -> Result<ComplexVector, ModelError> {
    let n_t = x.ncols();
    if n_t == 0 || !h.len().is_multiple_of(n_t) {
        return Err(LinalgError::DimensionMismatch(format!(
            "response length {} is not a multiple of N_T = {n_t}",
            h.len()
        ))
        .into());
    }
    let hm = unvec(h, n_t, h.len() / n_t)?;
    Ok(vec(&(x * hm)))
}

fn noise_checked<'a>(
    x: &ComplexMatrix,
    h: &ComplexVector,
    noise: &'a ComplexVector,
) -> Result<&'a ComplexVector, ModelError> {
    let expected = x.nrows() * (h.len() / x.ncols());
    if noise.len() != expected {
        return Err(LinalgError::DimensionMismatch(format!(
            "noise length {} but L·N_R = {expected}",
            noise.len()
        ))
        .into());
    }
    Ok(noise)
}
