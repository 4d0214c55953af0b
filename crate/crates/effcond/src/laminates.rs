//! Rational approximation models and hierarchical-laminate constructions.
//!
//! Three interchange-compatible model families for the effective conductivity
//! of a two-phase or polycrystalline composite, plus the lamination iteration
//! that realizes them:
//!
//! * [`RationalDiagRep`] — a diagonal entry of the effective tensor as a
//!   positive combination of weighted harmonic means of the two phase
//!   conductivities ([`eval_rational_diag`]);
//! * [`MatrixRationalRep`] — the matrix-valued analogue with symmetric
//!   positive-semidefinite residues, together with the volume-fraction sum
//!   rules ([`check_sum_rules`]);
//! * [`SStarRep`] — the pole/residue form of the interchange transform
//!   `S*(s)`, built so the quarter-turn interchange identity
//!   `S*(s) + R S*(1-s) R^T = I` holds identically ([`eval_sstar`],
//!   [`phase_interchange_residual`]);
//! * [`LaminateProgram`] — a hierarchical laminate of one crystal placed in
//!   rotated orientations, evaluated by [`polycrystal_laminate`] through the
//!   rank-one lamination recursion in inverse-transform coordinates.

use num_complex::Complex64;
use thiserror::Error;

use crate::tensor::Tensor2;

/// Tolerance for the simplex constraints on rational-model weights.
const SIMPLEX_TOL: f64 = 1e-12;

/// Tolerance for symmetry of residue matrices.
const SYM_TOL: f64 = 1e-12;

/// Lowest admissible eigenvalue when checking positive semidefiniteness.
const PSD_TOL: f64 = 1e-12;

/// Tolerance for residue matrices summing to the identity.
const SUM_TOL: f64 = 1e-10;

/// Tolerance for the laminate normal having unit length.
pub const UNIT_NORMAL_TOL: f64 = 1e-12;

/// Distance to a pole below which evaluation is refused.
const POLE_GUARD: f64 = 1e-13;

/// Number of evaluation points used by [`phase_interchange_residual`].
const INTERCHANGE_SAMPLES: usize = 50;

/// Radius of the sampling circle around the spectral interval.
const SAMPLE_RADIUS: f64 = 1.7;

/// Minimum imaginary part for points entering the sign-condition check.
const HERGLOTZ_MIN_IM: f64 = 0.05;

/// Errors from model validation and laminate evaluation.
#[derive(Debug, Error)]
pub enum LaminateError {
    /// A model parameter violates its structural constraints.
    #[error("constraint violated: {detail}")]
    ConstraintViolated {
        /// Which constraint failed and how.
        detail: String,
    },
    /// The reference constant makes the crystal transform singular.
    #[error("reference constant makes the crystal transform singular")]
    SingularReference,
    /// An intermediate lamination bracket is singular.
    #[error("singular bracket at lamination step {step}")]
    SingularStep {
        /// One-based index of the failing lamination step.
        step: usize,
    },
    /// The final accumulated transform cannot be inverted back to a tensor.
    #[error("accumulated transform is singular")]
    SingularResult,
}

fn constraint(detail: impl Into<String>) -> LaminateError {
    LaminateError::ConstraintViolated { detail: detail.into() }
}

/// A real symmetric 2x2 matrix stored row-major.
pub type SymMatrix2 = [[f64; 2]; 2];

/// Smallest eigenvalue of a symmetric 2x2 matrix.
fn sym_min_eig(m: &SymMatrix2) -> f64 {
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let half_gap = 0.5 * (m[0][0] - m[1][1]);
    half_tr - (half_gap * half_gap + m[0][1] * m[1][0]).sqrt()
}

/// Frobenius norm of a symmetric 2x2 matrix.
fn sym_frobenius(m: &SymMatrix2) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Quarter-turn conjugation `R^T M R` of a 2x2 matrix, with `R` the
/// counterclockwise quarter-turn rotation.
fn quarter_turn_conj(m: &SymMatrix2) -> SymMatrix2 {
    [[m[1][1], -m[1][0]], [-m[0][1], m[0][0]]]
}

fn real_to_tensor(m: &SymMatrix2) -> Tensor2 {
    Tensor2::new(
        Complex64::new(m[0][0], 0.0),
        Complex64::new(m[0][1], 0.0),
        Complex64::new(m[1][0], 0.0),
        Complex64::new(m[1][1], 0.0),
    )
}

/// Validates a shared weight grid: `1 = q_0 > q_1 > ... > q_{m+1} = 0`.
fn validate_weight_grid(q: &[f64]) -> Result<(), LaminateError> {
    if q.len() < 2 {
        return Err(constraint("weight grid needs at least the two endpoints"));
    }
    if (q[0] - 1.0).abs() > SIMPLEX_TOL {
        return Err(constraint(format!("leading weight must be 1, got {}", q[0])));
    }
    if q[q.len() - 1].abs() > SIMPLEX_TOL {
        return Err(constraint(format!(
            "trailing weight must be 0, got {}",
            q[q.len() - 1]
        )));
    }
    for i in 0..q.len() - 1 {
        if q[i + 1] >= q[i] {
            return Err(constraint(format!(
                "weights must strictly decrease, got {} then {}",
                q[i],
                q[i + 1]
            )));
        }
    }
    Ok(())
}

/// Diagonal-entry rational model: a convex combination of weighted harmonic
/// means of the two phase conductivities.
///
/// Degree-1 homogeneous, normalized (`F(s, s) = s`), and of positive real
/// part whenever both arguments have positive real part.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RationalDiagRep {
    q: Vec<f64>,
    a: Vec<f64>,
}

impl RationalDiagRep {
    /// Builds a model from mixing weights `q` (strictly decreasing from 1 to
    /// 0) and non-negative coefficients `a` summing to 1.
    pub fn new(q: Vec<f64>, a: Vec<f64>) -> Result<Self, LaminateError> {
        validate_weight_grid(&q)?;
        if a.len() != q.len() {
            return Err(constraint(format!(
                "coefficient count {} must match weight count {}",
                a.len(),
                q.len()
            )));
        }
        if let Some(bad) = a.iter().find(|x| **x < 0.0) {
            return Err(constraint(format!("coefficients must be non-negative, got {bad}")));
        }
        let total: f64 = a.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(constraint(format!("coefficients must sum to 1, got {total}")));
        }
        Ok(Self { q, a })
    }

    /// The mixing weights, decreasing from 1 to 0.
    pub fn weights(&self) -> &[f64] {
        &self.q
    }

    /// The convex coefficients attached to each weight.
    pub fn coefficients(&self) -> &[f64] {
        &self.a
    }
}

/// Evaluates a diagonal rational model at a phase pair.
pub fn eval_rational_diag(
    rep: &RationalDiagRep,
    s1: Complex64,
    s2: Complex64,
) -> Result<Complex64, LaminateError> {
    if s1.norm() == 0.0 || s2.norm() == 0.0 {
        return Err(constraint("phase conductivities must be nonzero"));
    }
    let mut total = Complex64::default();
    for (alpha, (&q, &a)) in rep.q.iter().zip(rep.a.iter()).enumerate() {
        if a == 0.0 {
            continue;
        }
        let denom = q / s1 + (1.0 - q) / s2;
        if denom.norm() < POLE_GUARD {
            return Err(constraint(format!("evaluation point is a pole of term {alpha}")));
        }
        total += a / denom;
    }
    Ok(total)
}

/// Matrix-valued rational model: symmetric positive-semidefinite residues on
/// a shared weight grid, summing to the identity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatrixRationalRep {
    q: Vec<f64>,
    a: Vec<SymMatrix2>,
}

impl MatrixRationalRep {
    /// Builds a model from mixing weights and symmetric PSD residues.
    pub fn new(q: Vec<f64>, a: Vec<SymMatrix2>) -> Result<Self, LaminateError> {
        validate_weight_grid(&q)?;
        if a.len() != q.len() {
            return Err(constraint(format!(
                "residue count {} must match weight count {}",
                a.len(),
                q.len()
            )));
        }
        let mut sum = [[0.0; 2]; 2];
        for (alpha, m) in a.iter().enumerate() {
            if (m[0][1] - m[1][0]).abs() > SYM_TOL {
                return Err(constraint(format!("residue {alpha} is not symmetric")));
            }
            if sym_min_eig(m) < -PSD_TOL {
                return Err(constraint(format!(
                    "residue {alpha} is not positive semidefinite (min eigenvalue {})",
                    sym_min_eig(m)
                )));
            }
            for r in 0..2 {
                for c in 0..2 {
                    sum[r][c] += m[r][c];
                }
            }
        }
        sum[0][0] -= 1.0;
        sum[1][1] -= 1.0;
        if sym_frobenius(&sum) > SUM_TOL {
            return Err(constraint(format!(
                "residues must sum to the identity (defect {:.3e})",
                sym_frobenius(&sum)
            )));
        }
        Ok(Self { q, a })
    }

    /// The mixing weights, decreasing from 1 to 0.
    pub fn weights(&self) -> &[f64] {
        &self.q
    }

    /// The residue matrices attached to each weight.
    pub fn residues(&self) -> &[SymMatrix2] {
        &self.a
    }

    /// Evaluates the model at a phase pair.
    pub fn eval(&self, s1: Complex64, s2: Complex64) -> Result<Tensor2, LaminateError> {
        if s1.norm() == 0.0 || s2.norm() == 0.0 {
            return Err(constraint("phase conductivities must be nonzero"));
        }
        let mut total = Tensor2::zero();
        for (alpha, (&q, m)) in self.q.iter().zip(self.a.iter()).enumerate() {
            if sym_frobenius(m) == 0.0 {
                continue;
            }
            let denom = q / s1 + (1.0 - q) / s2;
            if denom.norm() < POLE_GUARD {
                return Err(constraint(format!("evaluation point is a pole of term {alpha}")));
            }
            total = total.add(&real_to_tensor(m).scale(denom.inv()));
        }
        Ok(total)
    }
}

/// Residuals of the volume-fraction sum rules for a matrix rational model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumRuleResiduals {
    /// Frobenius defect of the first-order rule: the weight-averaged residue
    /// sum against `f` times the identity.
    pub linear: f64,
    /// Defect of the second-order trace rule against `f (1 - f)`.
    pub quadratic: f64,
}

/// Evaluates both volume-fraction sum rules for a declared fraction `f`.
pub fn check_sum_rules(rep: &MatrixRationalRep, f: f64) -> SumRuleResiduals {
    let mut first = [[0.0; 2]; 2];
    let mut second = 0.0;
    for (&q, m) in rep.q.iter().zip(rep.a.iter()) {
        for r in 0..2 {
            for c in 0..2 {
                first[r][c] += q * m[r][c];
            }
        }
        second += q * (1.0 - q) * (m[0][0] + m[1][1]);
    }
    first[0][0] -= f;
    first[1][1] -= f;
    SumRuleResiduals {
        linear: sym_frobenius(&first),
        quadratic: (second - f * (1.0 - f)).abs(),
    }
}

/// Pole/residue model of the interchange transform `S*(s)`.
///
/// Poles come in mirrored pairs `s_i`, `1 - s_i` with quarter-turn-conjugated
/// residues, so the interchange identity `S*(s) + R S*(1-s) R^T = I` holds
/// identically in `s`; the linear coefficient is tied to the constant matrix
/// for the same reason.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SStarRep {
    poles: Vec<f64>,
    residues: Vec<SymMatrix2>,
    a: SymMatrix2,
}

impl SStarRep {
    /// Builds a model from poles in `(0, 1)`, symmetric PSD residues, and a
    /// symmetric constant matrix dominating the weighted residue sum.
    pub fn new(
        poles: Vec<f64>,
        residues: Vec<SymMatrix2>,
        a: SymMatrix2,
    ) -> Result<Self, LaminateError> {
        if poles.len() != residues.len() {
            return Err(constraint(format!(
                "pole count {} must match residue count {}",
                poles.len(),
                residues.len()
            )));
        }
        for (i, &s) in poles.iter().enumerate() {
            if !(0.0 < s && s < 1.0) {
                return Err(constraint(format!(
                    "pole {i} must lie strictly inside the unit interval, got {s}"
                )));
            }
        }
        for (i, m) in residues.iter().enumerate() {
            if (m[0][1] - m[1][0]).abs() > SYM_TOL {
                return Err(constraint(format!("residue {i} is not symmetric")));
            }
            if sym_min_eig(m) < -PSD_TOL {
                return Err(constraint(format!(
                    "residue {i} is not positive semidefinite (min eigenvalue {})",
                    sym_min_eig(m)
                )));
            }
        }
        if (a[0][1] - a[1][0]).abs() > SYM_TOL {
            return Err(constraint("constant matrix is not symmetric"));
        }
        let mut dominated = a;
        for (&s, m) in poles.iter().zip(residues.iter()) {
            let turned = quarter_turn_conj(m);
            for r in 0..2 {
                for c in 0..2 {
                    dominated[r][c] -= m[r][c] / s + turned[r][c] / (1.0 - s);
                }
            }
        }
        if sym_min_eig(&dominated) < -PSD_TOL {
            return Err(constraint(format!(
                "constant matrix must dominate the weighted residue sum \
                 (min eigenvalue of the difference {})",
                sym_min_eig(&dominated)
            )));
        }
        Ok(Self { poles, residues, a })
    }

    /// The poles inside the unit interval.
    pub fn poles(&self) -> &[f64] {
        &self.poles
    }

    /// The residue matrix attached to each pole.
    pub fn residues(&self) -> &[SymMatrix2] {
        &self.residues
    }

    /// The constant matrix.
    pub fn constant(&self) -> &SymMatrix2 {
        &self.a
    }
}

/// Evaluates an `S*(s)` model at a point off the spectral interval.
pub fn eval_sstar(rep: &SStarRep, s: Complex64) -> Result<Tensor2, LaminateError> {
    if s.im.abs() < POLE_GUARD && (-POLE_GUARD..=1.0 + POLE_GUARD).contains(&s.re) {
        return Err(constraint("evaluation point lies on the spectral interval"));
    }
    let trace_a = rep.a[0][0] + rep.a[1][1];
    let mut total = Tensor2::identity()
        .scale(s * (1.0 + trace_a))
        .sub(&real_to_tensor(&rep.a));
    for (i, (&pole, m)) in rep.poles.iter().zip(rep.residues.iter()).enumerate() {
        let d1 = Complex64::new(pole, 0.0) - s;
        let d2 = Complex64::new(1.0 - pole, 0.0) - s;
        if d1.norm() < POLE_GUARD || d2.norm() < POLE_GUARD {
            return Err(constraint(format!("evaluation point hits pole pair {i}")));
        }
        total = total.add(&real_to_tensor(m).scale(d1.inv()));
        total = total.add(&real_to_tensor(&quarter_turn_conj(m)).scale(d2.inv()));
    }
    Ok(total)
}

/// Diagnostics of the interchange identity and the sign condition for an
/// `S*(s)` model, from a deterministic circle of evaluation points around the
/// spectral interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SStarDiagnostics {
    /// Worst Frobenius defect of `S*(s) + R S*(1-s) R^T - I` over the sample.
    pub functional_residual: f64,
    /// Smallest eigenvalue of `Im S*(s)` over sampled points in the upper
    /// half plane; non-negative for a valid model.
    pub herglotz_margin: f64,
}

/// Samples the interchange identity and the upper-half-plane sign condition.
pub fn phase_interchange_residual(rep: &SStarRep) -> SStarDiagnostics {
    let rot = Tensor2::rotation90();
    let mut functional_residual: f64 = 0.0;
    let mut herglotz_margin = f64::INFINITY;
    for k in 0..INTERCHANGE_SAMPLES {
        let angle = 2.0 * std::f64::consts::PI * (k as f64 + 0.5)
            / INTERCHANGE_SAMPLES as f64;
        let s = Complex64::new(
            0.5 + SAMPLE_RADIUS * angle.cos(),
            SAMPLE_RADIUS * angle.sin(),
        );
        let here = eval_sstar(rep, s).expect("circle points lie off the spectral interval");
        let mirrored = eval_sstar(rep, Complex64::new(1.0, 0.0) - s)
            .expect("mirrored circle points lie off the spectral interval");
        let defect = here
            .add(&rot.mul(&mirrored).mul(&rot.transpose()))
            .sub(&Tensor2::identity());
        functional_residual = functional_residual.max(defect.frobenius());
        if s.im > HERGLOTZ_MIN_IM {
            let imag = [
                [here.e[0][0].im, here.e[0][1].im],
                [here.e[1][0].im, here.e[1][1].im],
            ];
            herglotz_margin = herglotz_margin.min(sym_min_eig(&imag));
        }
    }
    SStarDiagnostics { functional_residual, herglotz_margin }
}

/// One lamination step: the new crystal orientation and its volume fraction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LaminateStep {
    /// Orientation of the crystal layer added at this step, in degrees.
    pub rotation_deg: f64,
    /// Volume fraction of the added layer, in `[0, 1]`.
    pub fraction: f64,
}

/// A hierarchical laminate of one crystal placed in rotated orientations.
///
/// The core holds the crystal at `rotation0_deg`; each step laminates the
/// structure built so far with a fresh layer of the crystal at that step's
/// orientation, along a direction derived from `n0` by the step's rotation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LaminateProgram {
    /// Conductivity tensor of the single crystal.
    pub sigma0: Tensor2,
    /// Reference constant for the inverse transform; chosen automatically
    /// when absent.
    #[serde(default)]
    pub sigma_ref: Option<f64>,
    /// Base lamination direction, a unit 2-vector.
    pub n0: [f64; 2],
    /// Orientation of the core crystal, in degrees.
    #[serde(default)]
    pub rotation0_deg: f64,
    /// Lamination steps, applied in order.
    pub steps: Vec<LaminateStep>,
}

/// Largest singular value of a 2x2 complex tensor.
fn max_singular_value(t: &Tensor2) -> f64 {
    // Largest eigenvalue of the Hermitian square, in closed form.
    let mut gram = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            gram[r][c] = (0..2).map(|k| (t.e[k][r].conj() * t.e[k][c]).re).sum();
        }
    }
    let half_tr = 0.5 * (gram[0][0] + gram[1][1]);
    let half_gap = 0.5 * (gram[0][0] - gram[1][1]);
    let disc = (half_gap * half_gap + gram[0][1] * gram[1][0]).max(0.0);
    (half_tr + disc.sqrt()).max(0.0).sqrt()
}

/// Rotation tensor for an angle in degrees.
fn rotation_deg(deg: f64) -> Tensor2 {
    let (sin, cos) = deg.to_radians().sin_cos();
    Tensor2::new(
        Complex64::new(cos, 0.0),
        Complex64::new(-sin, 0.0),
        Complex64::new(sin, 0.0),
        Complex64::new(cos, 0.0),
    )
}

/// Outer product `n n^T` of a real 2-vector, as a tensor.
fn outer(n: [f64; 2]) -> Tensor2 {
    Tensor2::new(
        Complex64::new(n[0] * n[0], 0.0),
        Complex64::new(n[0] * n[1], 0.0),
        Complex64::new(n[1] * n[0], 0.0),
        Complex64::new(n[1] * n[1], 0.0),
    )
}

/// Effective conductivity of a hierarchical polycrystal laminate.
///
/// Maps the crystal through the inverse transform relative to a reference
/// constant, seeds with the rotated core, laminates one rotated copy per step
/// by averaging the rank-one-shifted inverses, and maps the accumulated
/// transform back to a conductivity tensor. The result does not depend on
/// the reference constant, is degree-1 homogeneous in the crystal and
/// reference jointly, and reduces to a pure rotated crystal when a step has
/// fraction 1 (or when every following fraction is 0).
pub fn polycrystal_laminate(prog: &LaminateProgram) -> Result<Tensor2, LaminateError> {
    let n0_len = (prog.n0[0] * prog.n0[0] + prog.n0[1] * prog.n0[1]).sqrt();
    if (n0_len - 1.0).abs() > UNIT_NORMAL_TOL {
        return Err(constraint(format!(
            "base direction must be a unit vector, got length {n0_len}"
        )));
    }
    for (idx, step) in prog.steps.iter().enumerate() {
        if !(0.0..=1.0).contains(&step.fraction) {
            return Err(constraint(format!(
                "fraction at step {} must lie in [0, 1], got {}",
                idx + 1,
                step.fraction
            )));
        }
    }
    let sigma_ref = match prog.sigma_ref {
        Some(value) => value,
        None => 2.0 * max_singular_value(&prog.sigma0),
    };
    let ref_c = Complex64::new(sigma_ref, 0.0);
    let shifted = Tensor2::identity().scale(ref_c).sub(&prog.sigma0);
    let transform = shifted
        .inverse()
        .ok_or(LaminateError::SingularReference)?
        .scale(ref_c);

    let core_rot = rotation_deg(prog.rotation0_deg);
    let mut state = core_rot.transpose().mul(&transform).mul(&core_rot);
    for (idx, lam) in prog.steps.iter().enumerate() {
        let step = idx + 1;
        if lam.fraction == 0.0 {
            continue;
        }
        let rot = rotation_deg(lam.rotation_deg);
        let layer = rot.transpose().mul(&transform).mul(&rot);
        if lam.fraction == 1.0 {
            state = layer;
            continue;
        }
        let (sin, cos) = lam.rotation_deg.to_radians().sin_cos();
        let normal = [
            cos * prog.n0[0] + sin * prog.n0[1],
            -sin * prog.n0[0] + cos * prog.n0[1],
        ];
        let shift = outer(normal);
        let layer_inv = layer
            .sub(&shift)
            .inverse()
            .ok_or(LaminateError::SingularStep { step })?;
        let state_inv = state
            .sub(&shift)
            .inverse()
            .ok_or(LaminateError::SingularStep { step })?;
        let p = Complex64::new(lam.fraction, 0.0);
        let q = Complex64::new(1.0 - lam.fraction, 0.0);
        let averaged = layer_inv.scale(p).add(&state_inv.scale(q));
        state = averaged
            .inverse()
            .ok_or(LaminateError::SingularStep { step })?
            .add(&shift);
    }
    let back = state.inverse().ok_or(LaminateError::SingularResult)?;
    Ok(Tensor2::identity().sub(&back).scale(ref_c))
}
