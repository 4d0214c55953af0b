//! Recovery of spectral weights from samples of the one-parameter
//! restriction of the effective tensor.
//!
//! When both entries of the first phase are 1 and the second phase is
//! `lambda` times the identity, the reciprocal of the 11-entry of the
//! effective tensor is a finite sum of simple poles,
//! `1/sigma11(lambda) = sum_i beta_i^2 / (lambda rho_i + 1 - rho_i)`,
//! with `rho_i` in `(0, 1)` and non-negative weights summing to 1. Given
//! samples of `sigma11` at distinct `lambda`, [`recover_spectrum`] fits that
//! pole sum by an iteratively reweighted linearized rational least-squares
//! fit and returns the visible `(rho_i, beta_i^2)` pairs. Modes with zero
//! weight do not influence the restriction and cannot be recovered.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Number of reweighting passes of the linearized rational fit.
const REWEIGHT_PASSES: usize = 4;

/// Condition-number threshold above which the weight fit is refused.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Weights at or below this floor count as invisible modes.
pub const RESIDUE_FLOOR: f64 = 1e-12;

/// Relative imaginary part above which a fitted pole is rejected.
const POLE_IMAG_TOL: f64 = 1e-6;

/// Relative size below which trailing denominator coefficients are dropped.
const DEGREE_TOL: f64 = 1e-10;

/// Smallest denominator magnitude used when reweighting.
const WEIGHT_FLOOR: f64 = 1e-8;

/// Phase of the complex probe points in the default sampling grid.
const PROBE_PHASE: f64 = std::f64::consts::FRAC_PI_6;

/// One evaluation of the restricted effective entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSample {
    /// Conductivity of the second phase (first phase fixed at 1).
    pub lambda: Complex64,
    /// The 11-entry of the effective tensor at that contrast.
    pub value: Complex64,
}

/// Serialized form of [`SpectralSample`]: separate real and imaginary parts.
#[derive(serde::Serialize, serde::Deserialize)]
struct SpectralSampleParts {
    lambda_re: f64,
    lambda_im: f64,
    value_re: f64,
    value_im: f64,
}

impl serde::Serialize for SpectralSample {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        SpectralSampleParts {
            lambda_re: self.lambda.re,
            lambda_im: self.lambda.im,
            value_re: self.value.re,
            value_im: self.value.im,
        }
        .serialize(ser)
    }
}

impl<'de> serde::Deserialize<'de> for SpectralSample {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let p = SpectralSampleParts::deserialize(de)?;
        Ok(SpectralSample {
            lambda: Complex64::new(p.lambda_re, p.lambda_im),
            value: Complex64::new(p.value_re, p.value_im),
        })
    }
}

/// Recovered pole parameters, sorted by `rho` descending.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecoveredSpectrum {
    /// Spectral positions in `(0, 1)`.
    pub rho: Vec<f64>,
    /// Non-negative weights attached to each position.
    pub beta_sq: Vec<f64>,
    /// Worst relative defect of the fitted pole sum over the samples,
    /// combined with the defect of the weights summing to 1.
    pub misfit: f64,
}

/// Errors from spectral recovery.
#[derive(Debug, Error)]
pub enum RecoveryError {
    /// The sample set cannot support the requested fit.
    #[error("invalid samples: {detail}")]
    InvalidSamples {
        /// What is wrong with the sample set.
        detail: String,
    },
    /// The weight fit is numerically unreliable.
    #[error("weight fit is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditionedFit {
        /// Condition estimate of the weight least-squares system.
        condition: f64,
    },
    /// The data supports fewer visible modes than requested.
    #[error("requested {requested} modes but only {visible} are visible in the samples")]
    ModeCountMismatch {
        /// Number of modes requested by the caller.
        requested: usize,
        /// Number of modes actually visible in the data.
        visible: usize,
    },
}

fn invalid(detail: impl Into<String>) -> RecoveryError {
    RecoveryError::InvalidSamples { detail: detail.into() }
}

/// Default evaluation grid: logarithmically spaced real contrasts plus a
/// short complex probe line that improves the conditioning of the fit.
pub fn default_sample_grid(count: usize, lambda_min: f64, lambda_max: f64) -> Vec<Complex64> {
    assert!(count >= 1, "grid needs at least one point");
    assert!(
        0.0 < lambda_min && lambda_min < lambda_max,
        "grid range must satisfy 0 < min < max, got [{lambda_min}, {lambda_max}]"
    );
    let probes = count / 5;
    let reals = count - probes;
    let mut grid = Vec::with_capacity(count);
    let log_min = lambda_min.ln();
    let log_max = lambda_max.ln();
    for j in 0..reals {
        let t = if reals == 1 { 0.5 } else { j as f64 / (reals - 1) as f64 };
        grid.push(Complex64::new((log_min + t * (log_max - log_min)).exp(), 0.0));
    }
    let center = 0.5 * (log_min + log_max);
    let spread = 0.25 * (log_max - log_min);
    for j in 0..probes {
        let t = if probes == 1 { 0.5 } else { j as f64 / (probes - 1) as f64 };
        let radius = (center + (2.0 * t - 1.0) * spread).exp();
        grid.push(Complex64::from_polar(radius, PROBE_PHASE));
    }
    grid
}

/// Evaluates the pole-sum model at one contrast.
fn pole_sum(rho: &[f64], beta_sq: &[f64], lambda: Complex64) -> Complex64 {
    rho.iter()
        .zip(beta_sq.iter())
        .map(|(&r, &b)| b / (lambda * r + (1.0 - r)))
        .sum()
}

/// Least-squares solve returning the solution and a condition estimate.
fn solve_ls(matrix: DMatrix<f64>, rhs: DVector<f64>) -> (DVector<f64>, f64) {
    let svd = matrix.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    let condition = if min_sv > 0.0 { max_sv / min_sv } else { f64::INFINITY };
    let solution = svd
        .solve(&rhs, 0.0)
        .expect("SVD solve of a finite least-squares system cannot fail");
    (solution, condition)
}

/// Roots of a real polynomial given by coefficients from constant to leading
/// term, via its companion matrix.
fn real_polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = coeffs[degree];
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -coeffs[i] / lead;
    }
    companion.complex_eigenvalues().iter().copied().collect()
}

/// Fits the pole-sum model with `k` modes to samples of the restricted
/// effective entry.
///
/// Uses an iteratively reweighted linearized rational least-squares fit in a
/// scaled contrast variable, takes the denominator roots as pole locations,
/// keeps the ones on the admissible negative real axis, and resolves the
/// weights by a second least-squares fit with the poles held fixed. Returns
/// parameters sorted by spectral position descending, with the worst relative
/// sample defect (and the defect of the weights summing to 1) as `misfit`.
pub fn recover_spectrum(
    samples: &[SpectralSample],
    k: usize,
) -> Result<RecoveredSpectrum, RecoveryError> {
    if k == 0 {
        return Err(invalid("at least one mode must be requested"));
    }
    if samples.len() < 2 * k + 1 {
        return Err(invalid(format!(
            "{} modes need at least {} samples, got {}",
            k,
            2 * k + 1,
            samples.len()
        )));
    }
    for (j, sample) in samples.iter().enumerate() {
        if !sample.lambda.is_finite() || !sample.value.is_finite() {
            return Err(invalid(format!("sample {j} is not finite")));
        }
        if sample.value.norm() == 0.0 {
            return Err(invalid(format!("sample {j} has zero value")));
        }
    }
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            if (samples[a].lambda - samples[b].lambda).norm() == 0.0 {
                return Err(invalid(format!("samples {a} and {b} share a contrast")));
            }
        }
    }

    // Work with the reciprocal values in a geometrically scaled variable.
    let g: Vec<Complex64> = samples.iter().map(|s| s.value.inv()).collect();
    let nonzero: Vec<f64> =
        samples.iter().map(|s| s.lambda.norm()).filter(|n| *n > 0.0).collect();
    if nonzero.is_empty() {
        return Err(invalid("all samples sit at zero contrast"));
    }
    let scale = (nonzero.iter().map(|n| n.ln()).sum::<f64>() / nonzero.len() as f64).exp();
    let mu: Vec<Complex64> = samples.iter().map(|s| s.lambda / scale).collect();

    // Numerator degree k-1, denominator degree k with constant term 1:
    // rows are Re/Im of  sum_p n_p mu^p - g (d_1 mu + ... + d_k mu^k) = g.
    let unknowns = 2 * k;
    let rows = 2 * samples.len();
    let mut weights = vec![1.0; samples.len()];
    let mut denominator = vec![1.0; k + 1];
    for _ in 0..REWEIGHT_PASSES {
        let mut matrix = DMatrix::<f64>::zeros(rows, unknowns);
        let mut rhs = DVector::<f64>::zeros(rows);
        for (j, (&m, &gj)) in mu.iter().zip(g.iter()).enumerate() {
            let w = weights[j];
            let mut power = Complex64::new(1.0, 0.0);
            for p in 0..k {
                matrix[(2 * j, p)] = w * power.re;
                matrix[(2 * j + 1, p)] = w * power.im;
                power *= m;
            }
            let mut gm = gj * m;
            for q in 0..k {
                matrix[(2 * j, k + q)] = -w * gm.re;
                matrix[(2 * j + 1, k + q)] = -w * gm.im;
                gm *= m;
            }
            rhs[2 * j] = w * gj.re;
            rhs[2 * j + 1] = w * gj.im;
        }
        let (solution, _) = solve_ls(matrix, rhs);
        for q in 0..k {
            denominator[q + 1] = solution[k + q];
        }
        for (j, &m) in mu.iter().enumerate() {
            let mut value = Complex64::default();
            for &coeff in denominator.iter().rev() {
                value = value * m + coeff;
            }
            weights[j] = 1.0 / value.norm().max(WEIGHT_FLOOR);
        }
    }

    // Drop vanishing leading coefficients, then read poles off the roots.
    let coeff_scale =
        denominator.iter().map(|d| d.abs()).fold(1.0_f64, f64::max);
    let mut effective = denominator.clone();
    while effective.len() > 1
        && effective[effective.len() - 1].abs() < DEGREE_TOL * coeff_scale
    {
        effective.pop();
    }
    let mut rho: Vec<f64> = real_polynomial_roots(&effective)
        .into_iter()
        .filter(|root| {
            root.im.abs() <= POLE_IMAG_TOL * root.re.abs().max(1.0) && root.re < 0.0
        })
        .map(|root| 1.0 / (1.0 - scale * root.re))
        .filter(|r| (0.0..1.0).contains(r))
        .collect();
    rho.sort_by(|a, b| b.total_cmp(a));
    if rho.is_empty() {
        return Err(RecoveryError::IllConditionedFit { condition: f64::INFINITY });
    }

    // Resolve the weights with the accepted poles held fixed.
    let mut matrix = DMatrix::<f64>::zeros(rows, rho.len());
    let mut rhs = DVector::<f64>::zeros(rows);
    for (j, sample) in samples.iter().enumerate() {
        for (i, &r) in rho.iter().enumerate() {
            let basis = (sample.lambda * r + (1.0 - r)).inv();
            matrix[(2 * j, i)] = basis.re;
            matrix[(2 * j + 1, i)] = basis.im;
        }
        rhs[2 * j] = g[j].re;
        rhs[2 * j + 1] = g[j].im;
    }
    let (fitted, condition) = solve_ls(matrix, rhs);
    if condition > CONDITION_LIMIT {
        return Err(RecoveryError::IllConditionedFit { condition });
    }
    let beta_sq: Vec<f64> = fitted.iter().map(|b| b.max(0.0)).collect();

    let visible = beta_sq.iter().filter(|b| **b > RESIDUE_FLOOR).count();
    if visible < k {
        return Err(RecoveryError::ModeCountMismatch { requested: k, visible });
    }

    let mut misfit: f64 = 0.0;
    for (sample, &gj) in samples.iter().zip(g.iter()) {
        let model = pole_sum(&rho, &beta_sq, sample.lambda);
        misfit = misfit.max((model - gj).norm() / (1.0 + gj.norm()));
    }
    let total: f64 = beta_sq.iter().sum();
    misfit = misfit.max((total - 1.0).abs());
    Ok(RecoveredSpectrum { rho, beta_sq, misfit })
}
