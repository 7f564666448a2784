//! Minorization-maximization design of the waveform matrix `X` (`L × N_T`).
//!
//! The objective is split as
//!
//! ```text
//! D(X) = log det(I + R_H^{1/2} X̃†X̃ R_H^{1/2} / σ²)   (part I)
//!      + tr(R1⁻¹ X̃h_d h_d†X̃†)                        (part II)
//!      + σ²·tr(R1⁻¹)                                  (part III)
//!      − L·N_R
//! ```
//!
//! and each part is bounded from below by a function that is tangent at the
//! current iterate and at most quadratic in `X̃ = I_{N_R} ⊗ X`. The sum of the
//! bounds is a quadratic form in `x = vec(X)`, maximized over the energy ball
//! `‖x‖² ≤ P_t` by [`trs_solve`].

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{r1, relative_entropy, DetectionError};
use crate::model::{signal, stream_rng, ModelError, Scenario, TargetPrior};
use crate::numerics::{
    block_diagonal, c64, herm_eig, hermitian_part, hpd_factor, identity, trace_of_product, unvec,
    vec, ComplexMatrix, ComplexVector, LinalgError, C64,
};

/// Stream id of the random initial waveform drawn by [`optimize`].
pub const INIT_STREAM: u64 = 0x1417;

const SECULAR_MAX_ITERATIONS: usize = 500;
/// `|b_i| < HARD_CASE_TOLERANCE·‖m‖` on the top eigenspace marks the hard case.
const HARD_CASE_TOLERANCE: f64 = 1e-10;
const ASCENT_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmError {
    #[error("nominal response matrix is zero")]
    ZeroResponse,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("initial waveform energy {energy} exceeds the budget {budget}")]
    InfeasibleStart { energy: f64, budget: f64 },
    #[error("secular equation did not reach tolerance")]
    NoRoot,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmConfig {
    /// Stop once `|D_k − D_{k−1}| / |D_k|` falls below this.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Relative tolerance on `‖x‖² = P_t` for the secular equation.
    pub trs_tolerance: f64,
}

impl Default for MmConfig {
    fn default() -> Self {
        MmConfig {
            epsilon: 1e-4,
            max_iterations: 500,
            trs_tolerance: 1e-10,
        }
    }
}

impl MmConfig {
    pub fn validate(&self) -> Result<(), MmError> {
        if !(self.epsilon > 0.0) {
            return Err(MmError::InvalidConfig("epsilon must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(MmError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.trs_tolerance > 0.0) {
            return Err(MmError::InvalidConfig(
                "trs_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form SNR-optimal waveform `√P_t·u·v†`, with `u` the normalized
/// all-ones code and `v` the principal eigenvector of `H_d·H_d†`.
pub fn nominal_design(
    h_d: &ComplexMatrix,
    energy_budget: f64,
    code_length: usize,
) -> Result<ComplexMatrix, MmError> {
    if h_d.norm() == 0.0 {
        return Err(MmError::ZeroResponse);
    }
    let eig = herm_eig(&hermitian_part(&(h_d * h_d.adjoint())))?;
    let v = eig.eigenvectors.column(h_d.nrows() - 1).into_owned();
    let u = ComplexVector::from_element(code_length, c64((code_length as f64).sqrt().recip(), 0.0));
    Ok(u * v.adjoint() * c64(energy_budget.sqrt(), 0.0))
}

/// Unit-modulus entries with independent uniform phases, scaled so that
/// `tr(X·X†) = P_t`. Columns are nearly orthogonal when `L ≥ N_T`.
pub fn random_init(
    code_length: usize,
    n_t: usize,
    energy_budget: f64,
    rng: &mut impl Rng,
) -> ComplexMatrix {
    let x = ComplexMatrix::from_fn(code_length, n_t, |_, _| {
        C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))
    });
    let scale = (energy_budget / x.norm_squared()).sqrt();
    x * c64(scale, 0.0)
}

/// Exact values of the three parts of the objective at one waveform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `log det(I + R_H^{1/2} X̃†X̃ R_H^{1/2} / σ²)`
    pub log_det: f64,
    /// `tr(R1⁻¹ X̃h_d h_d†X̃†)`
    pub mean_term: f64,
    /// `tr(R1⁻¹)`
    pub trace_inverse: f64,
}

impl ObjectiveParts {
    pub fn evaluate(
        x: &ComplexMatrix,
        prior: &TargetPrior,
        noise_power: f64,
    ) -> Result<Self, MmError> {
        let xt = block_diagonal(x, prior.n_r());
        let a = &xt * prior.covariance_sqrt();
        let n = a.ncols();
        let inner = identity(n) + a.adjoint() * &a * c64(noise_power.recip(), 0.0);
        let log_det = hpd_factor(&hermitian_part(&inner))?.log_det();

        let factor = hpd_factor(&r1(x, prior, noise_power)?)?;
        let s = signal(x, prior.mean())?;
        let mean_term = factor.inv_quadratic_form(&s);
        let trace_inverse = factor.inverse().diagonal().iter().map(|z| z.re).sum();
        Ok(ObjectiveParts {
            log_det,
            mean_term,
            trace_inverse,
        })
    }

    /// Recombines the parts into the relative entropy.
    pub fn objective(&self, noise_power: f64, n_rl: usize) -> f64 {
        self.log_det + self.mean_term + noise_power * self.trace_inverse - n_rl as f64
    }
}

/// Quantities at the expansion point `X_k` shared by all three minorizers.
struct Expansion {
    xt: ComplexMatrix,
    r1: ComplexMatrix,
    r1_inv: ComplexMatrix,
    /// `X̃_k·h_d`
    s: ComplexVector,
    noise_power: f64,
}

impl Expansion {
    fn at(x_k: &ComplexMatrix, prior: &TargetPrior, noise_power: f64) -> Result<Self, MmError> {
        let r1 = r1(x_k, prior, noise_power)?;
        let r1_inv = hermitian_part(&hpd_factor(&r1)?.inverse());
        Ok(Expansion {
            xt: block_diagonal(x_k, prior.n_r()),
            r1,
            r1_inv,
            s: signal(x_k, prior.mean())?,
            noise_power,
        })
    }

    /// `X̃_k·R_H^{1/2}`
    fn a(&self, prior: &TargetPrior) -> ComplexMatrix {
        &self.xt * prior.covariance_sqrt()
    }

    /// `X̃_k·R_H·X̃_k† = R1 − σ²I`
    fn signal_covariance(&self) -> ComplexMatrix {
        let n = self.r1.nrows();
        &self.r1 - identity(n) * c64(self.noise_power, 0.0)
    }
}

/// `X̃·R_H·X̃†` for an arbitrary waveform.
fn signal_covariance(x: &ComplexMatrix, prior: &TargetPrior) -> ComplexMatrix {
    let xt = block_diagonal(x, prior.n_r());
    &xt * prior.covariance() * xt.adjoint()
}

/// How the supporting-hyperplane gradient of part I is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Part1Route {
    /// Invert the full `(N_TR + N_RL)²` block matrix
    /// `C_A = [[I, R_H^{1/2}X̃†], [X̃R_H^{1/2}, R1]]`.
    BlockInverse,
    /// Work with the `N_TR × N_TR` Schur complement
    /// `I − R_H^{1/2}X̃†R1⁻¹X̃R_H^{1/2}` only.
    #[default]
    Schur,
}

/// Part I minorizer
/// `g₁(X) = c1 + 2Re tr(X̃R_H^{1/2}T12) + tr(T22·X̃R_H X̃†)`.
#[derive(Debug, Clone)]
pub struct Part1Coefficients {
    pub t12: ComplexMatrix,
    pub t22: ComplexMatrix,
    pub c1: f64,
}

impl Part1Coefficients {
    pub fn evaluate(&self, x: &ComplexMatrix, prior: &TargetPrior) -> f64 {
        let xt = block_diagonal(x, prior.n_r());
        let linear = trace_of_product(&(&xt * prior.covariance_sqrt()), &self.t12).re;
        let quad = trace_of_product(&self.t22, &signal_covariance(x, prior)).re;
        self.c1 + 2.0 * linear + quad
    }
}

pub fn part1_coefficients(
    x_k: &ComplexMatrix,
    prior: &TargetPrior,
    noise_power: f64,
    route: Part1Route,
) -> Result<Part1Coefficients, MmError> {
    let e = Expansion::at(x_k, prior, noise_power)?;
    part1_from(&e, prior, route)
}

fn part1_from(
    e: &Expansion,
    prior: &TargetPrior,
    route: Part1Route,
) -> Result<Part1Coefficients, MmError> {
    let a = e.a(prior);
    let (n_rl, n_tr) = a.shape();
    let sigma2 = e.noise_power;
    match route {
        Part1Route::BlockInverse => {
            let n = n_tr + n_rl;
            let mut c = ComplexMatrix::zeros(n, n);
            c.view_mut((0, 0), (n_tr, n_tr)).copy_from(&identity(n_tr));
            c.view_mut((0, n_tr), (n_tr, n_rl)).copy_from(&a.adjoint());
            c.view_mut((n_tr, 0), (n_rl, n_tr)).copy_from(&a);
            c.view_mut((n_tr, n_tr), (n_rl, n_rl)).copy_from(&e.r1);
            let c_inv = hpd_factor(&c)?.inverse();
            // F = C⁻¹E†, G = E·C⁻¹·E†, T = −F·G⁻¹·F†
            let f = c_inv.columns(0, n_tr).into_owned();
            let g = hermitian_part(&c_inv.view((0, 0), (n_tr, n_tr)).into_owned());
            let g_factor = hpd_factor(&g)?;
            let t = hermitian_part(&(-(&f * g_factor.solve(&f.adjoint()))));
            let t11_trace: f64 = t
                .view((0, 0), (n_tr, n_tr))
                .diagonal()
                .iter()
                .map(|z| z.re)
                .sum();
            let t22 = t.view((n_tr, n_tr), (n_rl, n_rl)).into_owned();
            let t22_trace: f64 = t22.diagonal().iter().map(|z| z.re).sum();
            let c1 =
                t11_trace + sigma2 * t22_trace + g_factor.log_det() - trace_of_product(&t, &c).re;
            Ok(Part1Coefficients {
                t12: t.view((0, n_tr), (n_tr, n_rl)).into_owned(),
                t22,
                c1,
            })
        }
        Part1Route::Schur => {
            let r1_inv_a = &e.r1_inv * &a;
            let k = hermitian_part(&(identity(n_tr) - a.adjoint() * &r1_inv_a));
            let k_factor = hpd_factor(&k)?;
            let s = hermitian_part(&k_factor.inverse());
            let t12 = &s * r1_inv_a.adjoint();
            let t22 = hermitian_part(&(-(&r1_inv_a * &t12)));
            let c1 = -k_factor.log_det()
                - 2.0 * trace_of_product(&t12, &a).re
                - trace_of_product(&t22, &e.signal_covariance()).re;
            Ok(Part1Coefficients { t12, t22, c1 })
        }
    }
}

/// Part II minorizer `g₂(X) = c2 − tr(Z·X̃R_H X̃†) + 2Re tr(X̃†W)` with
/// `Z = u·u†`, `u = R1k⁻¹X̃_k h_d`, `W = u·h_d†`.
#[derive(Debug, Clone)]
pub struct Part2Coefficients {
    pub w: ComplexMatrix,
    pub z: ComplexMatrix,
    pub c2: f64,
}

impl Part2Coefficients {
    pub fn evaluate(&self, x: &ComplexMatrix, prior: &TargetPrior) -> f64 {
        let xt = block_diagonal(x, prior.n_r());
        let quad = trace_of_product(&self.z, &signal_covariance(x, prior)).re;
        let linear = trace_of_product(&xt.adjoint(), &self.w).re;
        self.c2 - quad + 2.0 * linear
    }
}

pub fn part2_coefficients(
    x_k: &ComplexMatrix,
    prior: &TargetPrior,
    noise_power: f64,
) -> Result<Part2Coefficients, MmError> {
    Ok(part2_from(&Expansion::at(x_k, prior, noise_power)?, prior))
}

fn part2_from(e: &Expansion, prior: &TargetPrior) -> Part2Coefficients {
    let u = &e.r1_inv * &e.s;
    let z = &u * u.adjoint();
    let w = &u * prior.mean().adjoint();
    let c2 = -e.noise_power * u.norm_squared();
    Part2Coefficients { w, z, c2 }
}

/// Part III minorizer `g₃(X) = c3 − tr(R1k⁻²·X̃R_H X̃†)`, a lower bound on
/// `tr(R1⁻¹)`.
#[derive(Debug, Clone)]
pub struct Part3Coefficients {
    pub r1_inv_sq: ComplexMatrix,
    pub c3: f64,
}

impl Part3Coefficients {
    pub fn evaluate(&self, x: &ComplexMatrix, prior: &TargetPrior) -> f64 {
        self.c3 - trace_of_product(&self.r1_inv_sq, &signal_covariance(x, prior)).re
    }
}

pub fn part3_coefficients(
    x_k: &ComplexMatrix,
    prior: &TargetPrior,
    noise_power: f64,
) -> Result<Part3Coefficients, MmError> {
    Ok(part3_from(&Expansion::at(x_k, prior, noise_power)?))
}

fn part3_from(e: &Expansion) -> Part3Coefficients {
    let r1_inv_sq = hermitian_part(&(&e.r1_inv * &e.r1_inv));
    let trace_inv: f64 = e.r1_inv.diagonal().iter().map(|z| z.re).sum();
    let c3 = trace_inv + trace_of_product(&r1_inv_sq, &e.signal_covariance()).re;
    Part3Coefficients { r1_inv_sq, c3 }
}

/// All minorizer coefficients at one expansion point.
#[derive(Debug, Clone)]
pub struct SurrogateCoefficients {
    pub part1: Part1Coefficients,
    pub part2: Part2Coefficients,
    pub part3: Part3Coefficients,
    pub noise_power: f64,
    n_rl: usize,
}

impl SurrogateCoefficients {
    pub fn at(
        x_k: &ComplexMatrix,
        prior: &TargetPrior,
        noise_power: f64,
        route: Part1Route,
    ) -> Result<Self, MmError> {
        let e = Expansion::at(x_k, prior, noise_power)?;
        Ok(SurrogateCoefficients {
            part1: part1_from(&e, prior, route)?,
            part2: part2_from(&e, prior),
            part3: part3_from(&e),
            noise_power,
            n_rl: e.r1.nrows(),
        })
    }

    /// `P_k = T12†·R_H^{1/2} + W_k`, the linear-term matrix (`N_RL × N_TR`).
    pub fn p_matrix(&self, prior: &TargetPrior) -> ComplexMatrix {
        self.part1.t12.adjoint() * prior.covariance_sqrt() + &self.part2.w
    }

    /// `Q_k = T22 − Z_k − σ²·R1k⁻²`, the quadratic-term matrix (`N_RL × N_RL`).
    pub fn q_matrix(&self) -> ComplexMatrix {
        &self.part1.t22 - &self.part2.z - &self.part3.r1_inv_sq * c64(self.noise_power, 0.0)
    }

    /// Constant dropped from the quadratic subproblem.
    pub fn constant(&self) -> f64 {
        self.part1.c1 + self.part2.c2 + self.noise_power * self.part3.c3 - self.n_rl as f64
    }

    /// Lower bound on the relative entropy, tangent at the expansion point.
    pub fn evaluate(&self, x: &ComplexMatrix, prior: &TargetPrior) -> f64 {
        self.part1.evaluate(x, prior)
            + self.part2.evaluate(x, prior)
            + self.noise_power * self.part3.evaluate(x, prior)
            - self.n_rl as f64
    }
}

/// `x†·kernel·x + 2·Re(x†·linear)`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub kernel: ComplexMatrix,
    pub linear: ComplexVector,
}

impl Quadratic {
    pub fn value(&self, x: &ComplexVector) -> f64 {
        x.dotc(&(&self.kernel * x)).re + 2.0 * x.dotc(&self.linear).re
    }
}

fn check_assembly_dims(
    coeffs: &SurrogateCoefficients,
    prior: &TargetPrior,
    code_length: usize,
) -> Result<(), MmError> {
    let n_rl = code_length * prior.n_r();
    let n_tr = prior.n_t() * prior.n_r();
    if coeffs.part1.t22.shape() != (n_rl, n_rl) || coeffs.part2.w.shape() != (n_rl, n_tr) {
        return Err(MmError::DimensionMismatch(format!(
            "coefficients do not match L = {code_length}, N_T = {}, N_R = {}",
            prior.n_t(),
            prior.n_r()
        )));
    }
    Ok(())
}

/// Quadratic form in `x = vec(X)` whose value differs from the surrogate by
/// [`SurrogateCoefficients::constant`].
///
/// Equivalent to `B_s†(R_H* ⊗ Q_k)B_s` and `B_s†vec(P_k)` (see
/// [`assemble_quadratic_explicit`]) but never forms the
/// `(N_TR·N_RL)²` Kronecker kernel: only the block-diagonal positions of
/// `X̃` carry waveform entries.
pub fn assemble_quadratic(
    coeffs: &SurrogateCoefficients,
    prior: &TargetPrior,
    code_length: usize,
) -> Result<Quadratic, MmError> {
    check_assembly_dims(coeffs, prior, code_length)?;
    let (l, n_t, n_r) = (code_length, prior.n_t(), prior.n_r());
    let q = coeffs.q_matrix();
    let p = coeffs.p_matrix(prior);
    let rh = prior.covariance();

    let mut kernel = ComplexMatrix::zeros(l * n_t, l * n_t);
    for j in 0..n_r {
        for jp in 0..n_r {
            let q_block = q.view((j * l, jp * l), (l, l));
            for t in 0..n_t {
                for tp in 0..n_t {
                    let r = rh[(j * n_t + t, jp * n_t + tp)].conj();
                    if r == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut block = kernel.view_mut((t * l, tp * l), (l, l));
                    block.zip_apply(&q_block, |k, qv| *k += r * qv);
                }
            }
        }
    }

    let mut linear = ComplexVector::zeros(l * n_t);
    for t in 0..n_t {
        for li in 0..l {
            linear[t * l + li] = (0..n_r).map(|j| p[(j * l + li, j * n_t + t)]).sum();
        }
    }
    Ok(Quadratic {
        kernel: hermitian_part(&kernel),
        linear,
    })
}

/// Literal form `M = B_s†(R_H* ⊗ Q_k)B_s`, `m = B_s†vec(P_k)`. Memory grows
/// as `(N_TR·N_RL)²`; intended for small instances and cross-checks.
pub fn assemble_quadratic_explicit(
    coeffs: &SurrogateCoefficients,
    prior: &TargetPrior,
    selection: &ComplexMatrix,
) -> Result<Quadratic, MmError> {
    let n_tr = prior.n_t() * prior.n_r();
    let n_rl = coeffs.part1.t22.nrows();
    if selection.nrows() != n_tr * n_rl {
        return Err(MmError::DimensionMismatch(format!(
            "selection matrix has {} rows, expected {}",
            selection.nrows(),
            n_tr * n_rl
        )));
    }
    let big = crate::numerics::kron(&prior.covariance().conjugate(), &coeffs.q_matrix());
    let kernel = selection.adjoint() * big * selection;
    let linear = selection.adjoint() * vec(&coeffs.p_matrix(prior));
    Ok(Quadratic {
        kernel: hermitian_part(&kernel),
        linear,
    })
}

/// Solution of the energy-constrained quadratic maximization.
#[derive(Debug, Clone)]
pub struct TrsSolution {
    pub x: ComplexVector,
    /// Lagrange multiplier `ν` in `x = −(M + νI)⁻¹m`; zero for an interior
    /// solution, nonpositive otherwise.
    pub multiplier: f64,
    pub on_boundary: bool,
    pub hard_case: bool,
}

/// Global maximizer of `x†Mx + 2Re(x†m)` subject to `‖x‖² ≤ budget`.
///
/// With `M = UΛU†` and `b = U†m`, a boundary solution is
/// `x = U·(b ./ (μ − λ))` where `μ > max(λ_max, 0)` solves
/// `Σ|b_i|²/(μ − λ_i)² = budget`.
pub fn trs_solve(
    kernel: &ComplexMatrix,
    linear: &ComplexVector,
    budget: f64,
    tol: f64,
) -> Result<TrsSolution, MmError> {
    let n = linear.len();
    if kernel.shape() != (n, n) {
        return Err(MmError::DimensionMismatch(format!(
            "kernel {}x{} vs linear term of length {n}",
            kernel.nrows(),
            kernel.ncols()
        )));
    }
    if !(budget > 0.0) {
        return Err(MmError::InvalidConfig(
            "energy budget must be positive".into(),
        ));
    }
    let eig = herm_eig(kernel)?;
    let lambda = &eig.eigenvalues;
    let u = &eig.eigenvectors;
    let b = u.adjoint() * linear;
    let weights: Vec<f64> = b.iter().map(|z| z.norm_sqr()).collect();
    let lambda_max = eig.max_eigenvalue();
    let m_norm = linear.norm();
    let spectral_scale = lambda.amax();

    let phi = |mu: f64, skip: &[bool]| -> f64 {
        (0..n)
            .filter(|&i| !skip[i] && weights[i] > 0.0)
            .map(|i| weights[i] / (mu - lambda[i]).powi(2))
            .sum()
    };
    let point = |mu: f64, skip: &[bool]| -> ComplexVector {
        ComplexVector::from_fn(n, |i, _| {
            if skip[i] || weights[i] == 0.0 {
                c64(0.0, 0.0)
            } else {
                b[i] / (mu - lambda[i])
            }
        })
    };
    let none = vec![false; n];

    if lambda_max < 0.0 {
        let interior = phi(0.0, &none);
        if interior <= budget {
            return Ok(TrsSolution {
                x: u * point(0.0, &none),
                multiplier: 0.0,
                on_boundary: false,
                hard_case: false,
            });
        }
    }

    let top_gap = 1e-10 * spectral_scale.max(f64::MIN_POSITIVE);
    let top: Vec<bool> = (0..n).map(|i| lambda[i] >= lambda_max - top_gap).collect();
    let top_is_empty = (0..n)
        .filter(|&i| top[i])
        .all(|i| b[i].norm() < HARD_CASE_TOLERANCE * m_norm || m_norm == 0.0);

    // Hard case: no linear weight on the top eigenspace and the remaining
    // components cannot fill the budget at μ = λ_max.
    if top_is_empty && lambda_max >= 0.0 {
        let rest = phi(lambda_max, &top);
        if rest <= budget {
            let mut y = point(lambda_max, &top);
            let first_top = (0..n)
                .rev()
                .find(|&i| top[i])
                .expect("top eigenspace is nonempty");
            y[first_top] = c64((budget - rest).max(0.0).sqrt(), 0.0);
            return Ok(TrsSolution {
                x: u * y,
                multiplier: -lambda_max,
                on_boundary: true,
                hard_case: true,
            });
        }
    }

    let skip = if top_is_empty {
        top.clone()
    } else {
        none.clone()
    };
    let floor = lambda_max.max(0.0);
    let offset_scale = spectral_scale.max(m_norm / budget.sqrt());
    let mut lo = if lambda_max >= 0.0 {
        lambda_max + 1e-12 * offset_scale
    } else {
        0.0
    };
    let mut hi = lambda_max.max(0.0) + m_norm / budget.sqrt() + 1.0;
    // Tiny-but-nonzero top components can leave φ(lo) below the budget.
    let mut halvings = 0;
    while phi(lo, &skip) < budget && lo > floor && halvings < 200 {
        lo = floor + 0.5 * (lo - floor);
        halvings += 1;
    }
    if phi(lo, &skip) < budget {
        // Numerically the hard case: put the remainder on the top eigenvector.
        let mut y = point(lo, &skip);
        let rest = y.norm_squared();
        let first_top = (0..n)
            .rev()
            .find(|&i| top[i])
            .expect("top eigenspace is nonempty");
        let extra = (budget - rest).max(0.0).sqrt();
        let phase = if y[first_top].norm() > 0.0 {
            y[first_top] / y[first_top].norm()
        } else {
            c64(1.0, 0.0)
        };
        y[first_top] += phase * extra;
        let scale = (budget / y.norm_squared()).sqrt();
        return Ok(TrsSolution {
            x: u * y * c64(scale.min(1.0), 0.0),
            multiplier: -lo,
            on_boundary: true,
            hard_case: true,
        });
    }

    // Safeguarded Newton on ψ(μ) = φ(μ)^{-1/2} − budget^{-1/2}, which is
    // increasing and nearly linear in μ.
    let target = budget.sqrt().recip();
    let mut mu = lo;
    let mut converged = false;
    for _ in 0..SECULAR_MAX_ITERATIONS {
        let f = phi(mu, &skip);
        if (f - budget).abs() <= tol * budget {
            converged = true;
            break;
        }
        if f > budget {
            lo = mu;
        } else {
            hi = mu;
        }
        let dphi: f64 = -2.0
            * (0..n)
                .filter(|&i| !skip[i] && weights[i] > 0.0)
                .map(|i| weights[i] / (mu - lambda[i]).powi(3))
                .sum::<f64>();
        let psi = f.sqrt().recip() - target;
        let dpsi = -0.5 * dphi / (f * f.sqrt());
        let newton = mu - psi / dpsi;
        mu = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
            mu = lo;
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MmError::NoRoot);
    }

    let mut x = u * point(mu, &skip);
    let norm2 = x.norm_squared();
    if norm2 > budget {
        x *= c64((budget / norm2).sqrt(), 0.0);
    }
    Ok(TrsSolution {
        x,
        multiplier: -mu,
        on_boundary: true,
        hard_case: false,
    })
}

/// One accepted point of the ascent.
#[derive(Debug, Clone)]
pub struct Iterate {
    pub waveform: ComplexMatrix,
    pub objective: f64,
    /// Multiplier of the subproblem that produced this point (zero for the
    /// starting point).
    pub multiplier: f64,
    /// `tr(X·X†)`
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct MmTrace {
    /// Starting point first, then one entry per accepted update.
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl MmTrace {
    pub fn last(&self) -> &Iterate {
        self.iterates
            .last()
            .expect("trace always holds the starting point")
    }

    pub fn waveform(&self) -> &ComplexMatrix {
        &self.last().waveform
    }

    pub fn objective(&self) -> f64 {
        self.last().objective
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.iterates.iter().map(|it| it.objective).collect()
    }
}

/// Runs the ascent from `x0`, or from [`random_init`] on stream
/// [`INIT_STREAM`] of `scenario.seed` when no start is given.
///
/// Stops when `|D_k − D_{k−1}| / |D_k| < ε`, or after
/// `max_iterations` updates with `converged = false`.
pub fn optimize(
    scenario: &Scenario,
    prior: &TargetPrior,
    config: &MmConfig,
    x0: Option<&ComplexMatrix>,
) -> Result<MmTrace, MmError> {
    config.validate()?;
    scenario.validate()?;
    let (l, n_t) = (scenario.code_length, scenario.n_t());
    if prior.n_t() != n_t || prior.n_r() != scenario.n_r() {
        return Err(MmError::DimensionMismatch(
            "prior does not match the scenario arrays".into(),
        ));
    }
    let budget = scenario.energy_budget;
    let sigma2 = scenario.noise_power;

    let mut x = match x0 {
        Some(x0) => {
            if x0.shape() != (l, n_t) {
                return Err(MmError::DimensionMismatch(format!(
                    "initial waveform is {}x{}, expected {l}x{n_t}",
                    x0.nrows(),
                    x0.ncols()
                )));
            }
            x0.clone()
        }
        None => random_init(l, n_t, budget, &mut stream_rng(scenario.seed, INIT_STREAM)),
    };
    let energy = x.norm_squared();
    if energy > budget * (1.0 + 1e-9) {
        return Err(MmError::InfeasibleStart { energy, budget });
    }

    let mut d = relative_entropy(&x, prior, sigma2)?;
    let mut iterates = vec![Iterate {
        waveform: x.clone(),
        objective: d,
        multiplier: 0.0,
        energy,
    }];
    let mut converged = false;

    for k in 1..=config.max_iterations {
        let coeffs = SurrogateCoefficients::at(&x, prior, sigma2, Part1Route::Schur)?;
        let quad = assemble_quadratic(&coeffs, prior, l)?;
        let sol = trs_solve(&quad.kernel, &quad.linear, budget, config.trs_tolerance)?;
        let next = unvec(&sol.x, l, n_t)?;
        let d_next = relative_entropy(&next, prior, sigma2)?;
        if d_next < d - ASCENT_SLACK * d.abs().max(1.0) {
            warn!("iteration {k}: objective fell from {d} to {d_next}; stopping");
            break;
        }
        let change = (d_next - d).abs() / d_next.abs().max(1e-300);
        debug!("iteration {k}: D = {d_next:.12e}, relative change {change:.3e}");
        x = next;
        d = d_next;
        iterates.push(Iterate {
            energy: x.norm_squared(),
            waveform: x.clone(),
            objective: d,
            multiplier: sol.multiplier,
        });
        if change < config.epsilon {
            converged = true;
            break;
        }
    }

    Ok(MmTrace {
        iterations_used: iterates.len() - 1,
        iterates,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_prior, ArrayGeometry};
    use crate::numerics::selection_matrix;

    fn tiny_scenario() -> Scenario {
        Scenario {
            tx: ArrayGeometry::new(2, 2.0).unwrap(),
            rx: ArrayGeometry::new(2, 0.5).unwrap(),
            code_length: 3,
            uncertainty_angles_deg: vec![-40.0, -10.0, 5.0, 30.0],
            uncertainty_power: 0.3,
            energy_budget: 2.0,
            ..Scenario::default()
        }
    }

    fn random_feasible(rng: &mut impl Rng, l: usize, n_t: usize, budget: f64) -> ComplexMatrix {
        let x = ComplexMatrix::from_fn(l, n_t, |_, _| {
            c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let energy = budget * rng.gen_range(0.0..1.0f64);
        x.clone() * c64((energy / x.norm_squared()).sqrt(), 0.0)
    }

    #[test]
    fn nominal_design_energy_and_rank() {
        let s = Scenario::default();
        let prior = build_prior(&s).unwrap();
        let x = nominal_design(&prior.mean_response(), 1.25, 20).unwrap();
        assert!((x.norm_squared() - 1.25).abs() < 1e-10);
        let sv = x.singular_values();
        assert!(sv[1] / sv[0] < 1e-10);
    }

    #[test]
    fn nominal_design_diagonal_response() {
        let h = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![
            c64(2.0, 0.0),
            c64(1.0, 0.0),
        ]));
        let x = nominal_design(&h, 1.0, 1).unwrap();
        let power = (&x * &h).norm_squared();
        assert!((power - 4.0).abs() < 1e-12);
        assert_eq!(
            nominal_design(&ComplexMatrix::zeros(2, 2), 1.0, 3),
            Err(MmError::ZeroResponse)
        );
    }

    #[test]
    fn objective_parts_recombine() {
        let s = tiny_scenario();
        let prior = build_prior(&s).unwrap();
        let mut rng = stream_rng(1, 0);
        for sigma2 in [1.0, 0.5] {
            let x = random_feasible(&mut rng, 3, 2, 2.0);
            let parts = ObjectiveParts::evaluate(&x, &prior, sigma2).unwrap();
            let d = relative_entropy(&x, &prior, sigma2).unwrap();
            assert!((parts.objective(sigma2, s.n_rl()) - d).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_expansion_point() {
        let s = tiny_scenario();
        let prior = build_prior(&s).unwrap();
        let zero = ComplexMatrix::zeros(3, 2);
        let p1 = part1_coefficients(&zero, &prior, 1.0, Part1Route::Schur).unwrap();
        assert!(p1.evaluate(&zero, &prior).abs() < 1e-12);
        let p3 = part3_coefficients(&zero, &prior, 2.0).unwrap();
        assert!((p3.evaluate(&zero, &prior) - s.n_rl() as f64 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mean_gives_zero_part2() {
        let s = tiny_scenario();
        let p = build_prior(&s).unwrap();
        let prior =
            TargetPrior::new(ComplexVector::zeros(4), p.covariance().clone(), 2, 2).unwrap();
        let mut rng = stream_rng(2, 0);
        let xk = random_feasible(&mut rng, 3, 2, 2.0);
        let c = part2_coefficients(&xk, &prior, 1.0).unwrap();
        assert_eq!(c.w.norm(), 0.0);
        assert_eq!(c.z.norm(), 0.0);
        let x = random_feasible(&mut rng, 3, 2, 2.0);
        assert_eq!(c.evaluate(&x, &prior), 0.0);
    }

    #[test]
    fn part1_routes_agree() {
        let s = tiny_scenario();
        let prior = build_prior(&s).unwrap();
        let mut rng = stream_rng(3, 0);
        for sigma2 in [1.0, 0.4] {
            let xk = random_feasible(&mut rng, 3, 2, 2.0);
            let a = part1_coefficients(&xk, &prior, sigma2, Part1Route::Schur).unwrap();
            let b = part1_coefficients(&xk, &prior, sigma2, Part1Route::BlockInverse).unwrap();
            assert!((&a.t12 - &b.t12).norm() < 1e-9 * a.t12.norm().max(1.0));
            assert!((&a.t22 - &b.t22).norm() < 1e-9 * a.t22.norm().max(1.0));
            assert!((a.c1 - b.c1).abs() < 1e-9 * a.c1.abs().max(1.0));
        }
    }

    #[test]
    fn assembly_routes_agree_and_match_trace_form() {
        let s = tiny_scenario();
        let prior = build_prior(&s).unwrap();
        let bs = selection_matrix(2, 2, 3);
        let mut rng = stream_rng(4, 0);
        for sigma2 in [1.0, 1.7] {
            let xk = random_feasible(&mut rng, 3, 2, 2.0);
            let c = SurrogateCoefficients::at(&xk, &prior, sigma2, Part1Route::Schur).unwrap();
            let fast = assemble_quadratic(&c, &prior, 3).unwrap();
            let slow = assemble_quadratic_explicit(&c, &prior, &bs).unwrap();
            assert!((&fast.kernel - &slow.kernel).norm() < 1e-10 * slow.kernel.norm().max(1.0));
            assert!((&fast.linear - &slow.linear).norm() < 1e-10 * slow.linear.norm().max(1.0));
            assert!(crate::numerics::hermitian_residual(&fast.kernel) < 1e-10);
            for _ in 0..5 {
                let x = random_feasible(&mut rng, 3, 2, 4.0);
                let lhs = fast.value(&vec(&x));
                let rhs = c.evaluate(&x, &prior) - c.constant();
                assert!(
                    (lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0),
                    "{lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn trs_interior_and_linear_cases() {
        let m = -identity(2);
        let lin = ComplexVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]);
        let sol = trs_solve(&m, &lin, 4.0, 1e-10).unwrap();
        assert!((sol.x[0] - c64(1.0, 0.0)).norm() < 1e-12 && sol.x[1].norm() < 1e-12);
        assert_eq!(sol.multiplier, 0.0);
        assert!(!sol.on_boundary);

        let sol = trs_solve(&ComplexMatrix::zeros(2, 2), &lin, 4.0, 1e-10).unwrap();
        assert!((sol.x[0] - c64(2.0, 0.0)).norm() < 1e-9 && sol.x[1].norm() < 1e-12);
        assert!((sol.x.norm_squared() - 4.0).abs() <= 1e-8 * 4.0);
    }

    #[test]
    fn trs_hard_case() {
        let m = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![
            c64(1.0, 0.0),
            c64(-1.0, 0.0),
        ]));
        let sol = trs_solve(&m, &ComplexVector::zeros(2), 3.0, 1e-10).unwrap();
        assert!(sol.hard_case);
        assert!((sol.x[0].norm() - 3f64.sqrt()).abs() < 1e-12);
        assert!(sol.x[1].norm() < 1e-12);
        let q = Quadratic {
            kernel: m,
            linear: ComplexVector::zeros(2),
        };
        assert!((q.value(&sol.x) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn trs_rejects_bad_input() {
        assert!(trs_solve(&identity(2), &ComplexVector::zeros(3), 1.0, 1e-10).is_err());
        assert!(trs_solve(&identity(2), &ComplexVector::zeros(2), 0.0, 1e-10).is_err());
    }

    #[test]
    fn random_init_properties() {
        let mut a = stream_rng(9, 1);
        let mut b = stream_rng(9, 1);
        let x = random_init(20, 6, 1.25, &mut a);
        assert!((x.norm_squared() - 1.25).abs() < 1e-14);
        assert_eq!(x, random_init(20, 6, 1.25, &mut b));
        let m0 = x[(0, 0)].norm();
        assert!(x.iter().all(|z| (z.norm() - m0).abs() < 1e-14));
    }

    #[test]
    fn optimize_rejects_infeasible_start() {
        let s = tiny_scenario();
        let prior = build_prior(&s).unwrap();
        let x0 = ComplexMatrix::from_element(3, 2, c64(1.0, 0.0));
        assert!(matches!(
            optimize(&s, &prior, &MmConfig::default(), Some(&x0)),
            Err(MmError::InfeasibleStart { .. })
        ));
        let bad = MmConfig {
            epsilon: 0.0,
            ..MmConfig::default()
        };
        assert!(optimize(&s, &prior, &bad, None).is_err());
    }

    #[test]
    fn optimize_small_run_ascends() {
        let s = tiny_scenario();
        let prior = build_prior(&s).unwrap();
        let trace = optimize(&s, &prior, &MmConfig::default(), None).unwrap();
        let d = trace.objectives();
        assert!(d
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0)));
        assert!(trace
            .iterates
            .iter()
            .all(|it| it.energy <= s.energy_budget * (1.0 + 1e-9)));
        assert!(trace.converged);
        assert_eq!(trace.iterations_used, trace.iterates.len() - 1);
    }
}
