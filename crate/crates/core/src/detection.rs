//! Two-hypothesis detection machinery.
//!
//! Under H₀ the received vector is white noise; under H₁ it is
//! `X̃h + n` with `h ~ CN(h_d, R_H)`, so `y ~ CN(X̃h_d, R1)` with
//! `R1 = X̃·R_H·X̃† + σ²I`.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    sample_noise, sample_target, signal, stream_rng, McRng, ModelError, TargetPrior,
};
use crate::numerics::{
    block_diagonal, c64, hermitian_part, hpd_factor, identity, ComplexMatrix, ComplexVector,
    HpdFactor, LinalgError,
};

/// Trials per independently seeded Monte Carlo chunk.
const MC_CHUNK: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("need trials * p_fa >= 10, got {trials} trials at p_fa = {p_fa}")]
    InsufficientTrials { trials: usize, p_fa: f64 },
    #[error("false-alarm probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("detector threshold has not been calibrated")]
    ThresholdMissing,
    #[error("waveform has {got} columns but the prior expects N_T = {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_dims(x: &ComplexMatrix, prior: &TargetPrior) -> Result<(), DetectionError> {
    if x.ncols() != prior.n_t() {
        return Err(DetectionError::DimensionMismatch {
            got: x.ncols(),
            expected: prior.n_t(),
        });
    }
    Ok(())
}

/// `R1 = X̃·R_H·X̃† + σ²I`, an `(L·N_R) × (L·N_R)` Hermitian PD matrix.
pub fn r1(
    x: &ComplexMatrix,
    prior: &TargetPrior,
    noise_power: f64,
) -> Result<ComplexMatrix, DetectionError> {
    check_dims(x, prior)?;
    let xt = block_diagonal(x, prior.n_r());
    let n = xt.nrows();
    let m = &xt * prior.covariance() * xt.adjoint() + identity(n) * c64(noise_power, 0.0);
    Ok(hermitian_part(&m))
}

/// `D(P₀‖P₁) = log det R1 + tr(R1⁻¹(X̃h_d h_d†X̃† + σ²I)) − L·N_R·(1 + log σ²)`.
pub fn relative_entropy(
    x: &ComplexMatrix,
    prior: &TargetPrior,
    noise_power: f64,
) -> Result<f64, DetectionError> {
    let r1 = r1(x, prior, noise_power)?;
    let factor = hpd_factor(&r1)?;
    let s = signal(x, prior.mean())?;
    let n = r1.nrows() as f64;
    let trace_inv: f64 = factor.inverse().diagonal().iter().map(|z| z.re).sum();
    Ok(
        factor.log_det() + factor.inv_quadratic_form(&s) + noise_power * trace_inv
            - n * (1.0 + noise_power.ln()),
    )
}

/// Wirtinger gradient `∂D/∂X*` of [`relative_entropy`], an `L × N_T` matrix.
///
/// For a real perturbation direction the first-order change is
/// `dD = 2·Re tr(G·dX†)`.
pub fn relative_entropy_gradient(
    x: &ComplexMatrix,
    prior: &TargetPrior,
    noise_power: f64,
) -> Result<ComplexMatrix, DetectionError> {
    let r1 = r1(x, prior, noise_power)?;
    let factor = hpd_factor(&r1)?;
    let r1_inv = factor.inverse();
    let s = signal(x, prior.mean())?;
    let u = factor.solve_vec(&s);
    let g = &r1_inv - &u * u.adjoint() - &r1_inv * &r1_inv * c64(noise_power, 0.0);
    let xt = block_diagonal(x, prior.n_r());
    let full = g * xt * prior.covariance() + &u * prior.mean().adjoint();

    let (l, n_t) = x.shape();
    let mut grad = ComplexMatrix::zeros(l, n_t);
    for j in 0..prior.n_r() {
        grad += full.view((j * l, j * n_t), (l, n_t));
    }
    Ok(grad)
}

/// Where `h` comes from when simulating the target-present hypothesis.
#[derive(Debug, Clone, Copy)]
pub enum TargetSource<'a> {
    /// No target: H₀ draws, used to measure the false-alarm rate.
    Absent,
    /// Deterministic response vector.
    Fixed(&'a ComplexVector),
    /// Fresh draw from a Gaussian prior on every trial.
    Prior(&'a TargetPrior),
}

/// Seed and stream id for a Monte Carlo run. Work is split into chunks
/// with their own substreams, so results do not depend on thread count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub seed: u64,
    pub stream: u32,
}

impl MonteCarlo {
    pub fn new(seed: u64, stream: u32) -> Self {
        MonteCarlo { seed, stream }
    }

    fn chunk_rng(&self, chunk: usize) -> McRng {
        stream_rng(self.seed, (u64::from(self.stream) << 32) | chunk as u64)
    }

    /// Runs `trial` `trials` times and returns the per-chunk outputs in
    /// chunk order.
    fn run<T: Send>(&self, trials: usize, trial: impl Fn(&mut McRng) -> T + Sync) -> Vec<T> {
        let chunks = trials.div_ceil(MC_CHUNK);
        let per_chunk: Vec<Vec<T>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = self.chunk_rng(c);
                let count = MC_CHUNK.min(trials - c * MC_CHUNK);
                (0..count).map(|_| trial(&mut rng)).collect()
            })
            .collect();
        per_chunk.into_iter().flatten().collect()
    }
}

/// Value at index `⌈(1 − p_fa)·n⌉ − 1` of the ascending sort of `samples`.
pub fn order_statistic_threshold(samples: &mut [f64], p_fa: f64) -> f64 {
    let n = samples.len();
    samples.sort_by(|a, b| a.total_cmp(b));
    // ⌈(1 − p)·n⌉ = n − ⌊p·n⌋; the epsilon absorbs representation error in p·n.
    let exceed = ((p_fa * n as f64) + 1e-9).floor() as usize;
    samples[n - exceed.min(n) - 1]
}

/// Everything the Neyman-Pearson detector for one waveform needs.
#[derive(Debug, Clone)]
pub struct DetectorSpec {
    waveform: ComplexMatrix,
    r1_factor: HpdFactor,
    xh_d: ComplexVector,
    noise_power: f64,
    /// `I − σ²R1⁻¹`
    quadratic: ComplexMatrix,
    /// `σ²R1⁻¹X̃h_d`
    linear: ComplexVector,
    threshold: Option<f64>,
}

impl DetectorSpec {
    /// Detector matched to `prior` for waveform `x`.
    pub fn new(
        x: &ComplexMatrix,
        prior: &TargetPrior,
        noise_power: f64,
    ) -> Result<Self, DetectionError> {
        let r1 = r1(x, prior, noise_power)?;
        let r1_factor = hpd_factor(&r1)?;
        let n = r1.nrows();
        let quadratic =
            hermitian_part(&(identity(n) - r1_factor.inverse() * c64(noise_power, 0.0)));
        let xh_d = signal(x, prior.mean())?;
        let linear = r1_factor.solve_vec(&xh_d) * c64(noise_power, 0.0);
        Ok(DetectorSpec {
            waveform: x.clone(),
            r1_factor,
            xh_d,
            noise_power,
            quadratic,
            linear,
            threshold: None,
        })
    }

    pub fn waveform(&self) -> &ComplexMatrix {
        &self.waveform
    }

    pub fn r1_factor(&self) -> &HpdFactor {
        &self.r1_factor
    }

    pub fn xh_d(&self) -> &ComplexVector {
        &self.xh_d
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn with_threshold(mut self, gamma: f64) -> Self {
        self.threshold = Some(gamma);
        self
    }

    pub fn observation_len(&self) -> usize {
        self.linear.len()
    }

    /// `y†(I − σ²R1⁻¹)y + 2σ²·Re(y†R1⁻¹X̃h_d)`.
    pub fn statistic(&self, y: &ComplexVector) -> f64 {
        let qy = &self.quadratic * y;
        let quad = y.dotc(&qy);
        debug_assert!(
            quad.im.abs() < 1e-8 * quad.re.abs() + 1e-8,
            "quadratic form has imaginary part {}",
            quad.im
        );
        quad.re + 2.0 * y.dotc(&self.linear).re
    }

    fn draw(&self, source: &TargetSource<'_>, rng: &mut McRng) -> ComplexVector {
        let n = self.observation_len();
        let noise = sample_noise(n, self.noise_power, rng);
        let h = match source {
            TargetSource::Absent => return noise,
            TargetSource::Fixed(h) => (*h).clone(),
            TargetSource::Prior(p) => sample_target(p, rng),
        };
        signal(&self.waveform, &h).expect("target dimension validated before the run") + noise
    }

    fn check_source(&self, source: &TargetSource<'_>) -> Result<(), DetectionError> {
        let len = match source {
            TargetSource::Absent => return Ok(()),
            TargetSource::Fixed(h) => h.len(),
            TargetSource::Prior(p) => p.mean().len(),
        };
        let n_t = self.waveform.ncols();
        if len % n_t != 0 || self.waveform.nrows() * (len / n_t) != self.observation_len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "target response of length {len} does not match the detector"
            ))
            .into());
        }
        Ok(())
    }

    /// Sets the threshold to the empirical `(1 − p_fa)` quantile of the
    /// statistic under H₀ and returns it.
    pub fn calibrate_threshold(
        &mut self,
        p_fa: f64,
        trials: usize,
        mc: MonteCarlo,
    ) -> Result<f64, DetectionError> {
        if !(p_fa > 0.0 && p_fa < 1.0) {
            return Err(DetectionError::InvalidProbability(p_fa));
        }
        if (trials as f64) * p_fa < 10.0 - 1e-9 {
            return Err(DetectionError::InsufficientTrials { trials, p_fa });
        }
        let mut stats = mc.run(trials, |rng| {
            let y = self.draw(&TargetSource::Absent, rng);
            self.statistic(&y)
        });
        let gamma = order_statistic_threshold(&mut stats, p_fa);
        self.threshold = Some(gamma);
        Ok(gamma)
    }

    /// Fraction of trials with statistic strictly above the threshold.
    pub fn detection_probability(
        &self,
        source: TargetSource<'_>,
        trials: usize,
        mc: MonteCarlo,
    ) -> Result<f64, DetectionError> {
        let gamma = self.threshold.ok_or(DetectionError::ThresholdMissing)?;
        self.check_source(&source)?;
        if trials == 0 {
            return Ok(0.0);
        }
        let hits = mc
            .run(trials, |rng| {
                let y = self.draw(&source, rng);
                self.statistic(&y) > gamma
            })
            .into_iter()
            .filter(|&d| d)
            .count();
        Ok(hits as f64 / trials as f64)
    }
}
