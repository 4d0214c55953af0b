//! Finite closed field spaces that preserve the low-order expansion of the
//! effective tensor.
//!
//! Starting from the two mean fields, chains of alternating Helmholtz and
//! phase projections generate a nested family of fields. The span of those
//! chains, augmented with the projection residuals of the deepest order and
//! their quarter-turn partners, is invariant under every operator the cell
//! problem uses: the four phase projections, the quarter turn, and the mirror
//! reflection. Solving the cell problem inside the assembled space therefore
//! reproduces the weak-contrast expansion of the effective tensor through the
//! chain order exactly, which [`compare_expansions`] verifies term by term.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{GridGeometry, PhaseProjector, Spectral, VectorField};
use crate::solver::series_coefficients;
use crate::tensor::Tensor2;

/// Default relative cutoff below which a candidate direction is treated as
/// already contained in the span during rank reduction.
pub const DEFAULT_SPAN_TOL: f64 = 1e-10;
/// Hard cap on the number of raw chain fields generated by one call.
pub const RAW_FIELD_BUDGET: usize = 40_000;
/// Largest closure residual tolerated when the assembled space is verified.
pub const CLOSURE_TOL: f64 = 1e-9;
/// Chain fields with norm at or below this are flagged as degenerate.
const NEGLIGIBLE_NORM: f64 = 1e-13;
/// Absolute floor for accepting residual directions; keeps pure round-off
/// vectors out of the basis, where normalizing them would destroy closure.
const RESIDUAL_FLOOR: f64 = 1e-12;

/// Failure modes of chain generation and space assembly.
#[derive(Debug, Error)]
pub enum TruncationError {
    /// A chain index entry was outside the four admissible projections.
    #[error("chain index entry {value} at position {position} is outside 1..=4")]
    BadIndex {
        /// Zero-based position of the offending entry.
        position: usize,
        /// The rejected value.
        value: u8,
    },
    /// A chain index had no entries.
    #[error("a chain index needs at least one entry")]
    EmptyIndex,
    /// The requested order would generate more raw fields than the cap.
    #[error("order {order} asks for {requested} chain fields, beyond the cap of {cap}")]
    BudgetExceeded {
        /// The requested chain order.
        order: usize,
        /// Raw fields the order would generate.
        requested: usize,
        /// The configured cap.
        cap: usize,
    },
    /// A basis field escaped the space under one of the checked operators.
    #[error("space not closed under {op}: image of basis field {field} leaks {residual:.3e}")]
    ClosureFailure {
        /// Name of the operator whose image leaked.
        op: &'static str,
        /// Index of the offending basis field.
        field: usize,
        /// Norm of the out-of-space component.
        residual: f64,
    },
    /// The conductivity restricted to the space was numerically singular.
    #[error("the restricted conductivity operator is singular on the space")]
    SingularSystem,
}

/// Ordered projection choices `a_1 .. a_m`, each naming one of the four
/// phase projections, that label a chain field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    indices: Vec<u8>,
}

impl MultiIndex {
    /// Validate and wrap a list of projection choices.
    pub fn new(indices: Vec<u8>) -> Result<Self, TruncationError> {
        if indices.is_empty() {
            return Err(TruncationError::EmptyIndex);
        }
        for (position, &value) in indices.iter().enumerate() {
            if !(1..=4).contains(&value) {
                return Err(TruncationError::BadIndex { position, value });
            }
        }
        Ok(MultiIndex { indices })
    }

    /// Number of projection steps in the chain.
    pub fn order(&self) -> usize {
        self.indices.len()
    }

    /// The projection choices, outermost first.
    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    /// Companion index under the quarter turn: the turn swaps the two field
    /// components, exchanging projections 1<->2 and 3<->4 entrywise.
    pub fn conjugate(&self) -> MultiIndex {
        let indices = self
            .indices
            .iter()
            .map(|&value| match value {
                1 => 2,
                2 => 1,
                3 => 4,
                _ => 3,
            })
            .collect();
        MultiIndex { indices }
    }
}

/// Which Helmholtz component a chain keeps after each projection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    /// The chain interleaves the mean-free curl-free projection.
    CurlFree,
    /// The chain interleaves the mean-free divergence-free projection.
    DivFree,
}

/// One raw chain field together with its construction labels.
#[derive(Debug, Clone)]
pub struct GeneratedField {
    /// The projection choices that produced the field.
    pub index: MultiIndex,
    /// Which Helmholtz projection the chain interleaves.
    pub kind: ChainKind,
    /// Which mean field seeded the chain (1 or 2).
    pub seed: usize,
    /// The sampled field itself.
    pub field: VectorField,
    /// True when the chain collapsed to numerical zero.
    pub negligible: bool,
}

/// Raw chain fields the given order generates, before any rank reduction.
fn raw_field_count(order: usize) -> usize {
    let mut level: usize = 1;
    let mut total: usize = 0;
    for _ in 1..=order {
        level = level.saturating_mul(4);
        total = total.saturating_add(level);
    }
    total.saturating_mul(4)
}

/// Generate every chain field of order `1..=order` from both mean-field
/// seeds and both Helmholtz sectors.
///
/// Chains nest outward: the field labelled `(a_1, .., a_m)` applies the
/// phase projection `a_m` to the seed first and `a_1` last, with the
/// sector's Helmholtz projection after every step. Fields that collapse to
/// numerical zero are kept and flagged so the census of the order stays
/// `4 * (4^1 + .. + 4^order)`.
pub fn generate_fields(
    geom: &GridGeometry,
    order: usize,
) -> Result<Vec<GeneratedField>, TruncationError> {
    assert!(order >= 1, "chain order must be at least 1, got {order}");
    let requested = raw_field_count(order);
    if requested > RAW_FIELD_BUDGET {
        return Err(TruncationError::BudgetExceeded {
            order,
            requested,
            cap: RAW_FIELD_BUDGET,
        });
    }
    let n = geom.n();
    let spectral = Spectral::new(n);
    let seeds = [VectorField::unit_e1(n), VectorField::unit_e1(n).rotate_perp()];
    let mut out = Vec::with_capacity(requested);
    for kind in [ChainKind::CurlFree, ChainKind::DivFree] {
        for (seed_pos, seed_field) in seeds.iter().enumerate() {
            let mut level: Vec<(Vec<u8>, VectorField)> =
                vec![(Vec::new(), seed_field.clone())];
            for _ in 1..=order {
                let next: Vec<(Vec<u8>, VectorField)> = (1u8..=4)
                    .into_par_iter()
                    .flat_map_iter(|a| {
                        let spectral = &spectral;
                        level.iter().map(move |(tail, field)| {
                            let mut indices = Vec::with_capacity(tail.len() + 1);
                            indices.push(a);
                            indices.extend_from_slice(tail);
                            let projector = PhaseProjector::ALL[(a - 1) as usize];
                            let projected = geom.project_phase(projector, field);
                            let chained = match kind {
                                ChainKind::CurlFree => spectral.gamma1(&projected),
                                ChainKind::DivFree => spectral.gamma2(&projected),
                            };
                            (indices, chained)
                        })
                    })
                    .collect();
                for (indices, field) in &next {
                    let negligible = field.norm() <= NEGLIGIBLE_NORM;
                    out.push(GeneratedField {
                        index: MultiIndex { indices: indices.clone() },
                        kind,
                        seed: seed_pos + 1,
                        field: field.clone(),
                        negligible,
                    });
                }
                level = next;
            }
        }
    }
    Ok(out)
}

/// Subtract from `field` its component along each entry of `basis`
/// (which must be orthonormal). Two passes keep the result orthogonal to
/// working precision even when the component is large.
fn project_out(basis: &[VectorField], field: &mut VectorField) {
    for _ in 0..2 {
        for b in basis {
            let coeff = b.inner(field);
            if coeff.norm() > 0.0 {
                let correction = b.scale(-coeff);
                field.add_assign(&correction);
            }
        }
    }
}

/// Extend `basis` (orthonormal) with an orthonormal span of `candidates`,
/// choosing pivots by largest residual norm and stopping at the relative
/// cutoff. Returns how many fields were appended.
fn pivoted_extension(
    basis: &mut Vec<VectorField>,
    mut candidates: Vec<VectorField>,
    rel_tol: f64,
) -> usize {
    for field in &mut candidates {
        project_out(basis, field);
    }
    let scale = candidates.iter().map(|f| f.norm()).fold(0.0f64, f64::max);
    let cutoff = (rel_tol * scale).max(RESIDUAL_FLOOR);
    let mut appended = 0;
    loop {
        let mut best = usize::MAX;
        let mut best_norm = cutoff;
        for (k, field) in candidates.iter().enumerate() {
            let norm = field.norm();
            if norm > best_norm {
                best_norm = norm;
                best = k;
            }
        }
        if best == usize::MAX {
            break;
        }
        let mut accepted = candidates.swap_remove(best);
        project_out(basis, &mut accepted);
        let norm = accepted.norm();
        if norm <= cutoff {
            continue;
        }
        let unit = accepted.scale(Complex64::new(1.0 / norm, 0.0));
        for field in &mut candidates {
            let coeff = unit.inner(field);
            let correction = unit.scale(-coeff);
            field.add_assign(&correction);
        }
        basis.push(unit);
        appended += 1;
    }
    appended
}

/// A finite field space closed under the phase projections, the quarter
/// turn, and the mirror reflection, containing every chain field up to its
/// order.
#[derive(Debug, Clone)]
pub struct TruncatedSpace {
    geom: GridGeometry,
    order: usize,
    basis: Vec<VectorField>,
    curl_dim: usize,
    div_dim: usize,
    closure_residuals: Vec<(&'static str, f64)>,
}

/// Layout of [`TruncatedSpace::basis`]: the two mean fields first.
const MEAN_DIM: usize = 2;

impl TruncatedSpace {
    /// Total dimension of the space.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// The chain order the space was built for.
    pub fn order(&self) -> usize {
        self.order
    }

    /// The geometry the space was built on.
    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    /// The orthonormal basis: mean fields, then the curl-like sector, then
    /// the divergence-like sector.
    pub fn basis(&self) -> &[VectorField] {
        &self.basis
    }

    /// Dimension of the curl-like sector (chain span plus residuals).
    pub fn curl_dim(&self) -> usize {
        self.curl_dim
    }

    /// Dimension of the divergence-like sector.
    pub fn div_dim(&self) -> usize {
        self.div_dim
    }

    /// Largest observed closure residual per verified operator.
    pub fn closure_residuals(&self) -> &[(&'static str, f64)] {
        &self.closure_residuals
    }

    fn project_onto(&self, range: std::ops::Range<usize>, f: &VectorField) -> VectorField {
        let mut out = VectorField::zeros(f.n());
        for b in &self.basis[range] {
            let coeff = b.inner(f);
            out.add_assign(&b.scale(coeff));
        }
        out
    }

    /// Orthogonal projection onto the whole space.
    pub fn project(&self, f: &VectorField) -> VectorField {
        self.project_onto(0..self.basis.len(), f)
    }

    /// Projection onto the mean-field part; agrees with the full-grid mean
    /// projection on members of the space.
    pub fn project_mean(&self, f: &VectorField) -> VectorField {
        self.project_onto(0..MEAN_DIM, f)
    }

    /// Projection onto the curl-like sector: the in-space replacement for
    /// the mean-free curl-free Helmholtz projection.
    pub fn project_curl(&self, f: &VectorField) -> VectorField {
        self.project_onto(MEAN_DIM..MEAN_DIM + self.curl_dim, f)
    }

    /// Projection onto the divergence-like sector.
    pub fn project_div(&self, f: &VectorField) -> VectorField {
        let start = MEAN_DIM + self.curl_dim;
        self.project_onto(start..start + self.div_dim, f)
    }

    /// Norm of the component of `f` outside the space.
    pub fn residual(&self, f: &VectorField) -> f64 {
        f.sub(&self.project(f)).norm()
    }

    /// Effective tensor of the cell problem solved wholly inside the space:
    /// the field fluctuation is sought in the curl-like sector and the flux
    /// balance is imposed against the same sector.
    pub fn effective_tensor(
        &self,
        sigma1: &Tensor2,
        sigma2: &Tensor2,
    ) -> Result<Tensor2, TruncationError> {
        let n = self.geom.n();
        let trial = &self.basis[MEAN_DIM..MEAN_DIM + self.curl_dim];
        let dim = trial.len();
        let images: Vec<VectorField> = trial
            .par_iter()
            .map(|w| self.geom.apply_conductivity(sigma1, sigma2, w))
            .collect();
        let mut mat = DMatrix::<Complex64>::zeros(dim, dim);
        for a in 0..dim {
            for b in 0..dim {
                mat[(a, b)] = trial[a].inner(&images[b]);
            }
        }
        let lu = mat.lu();
        let mut star = Tensor2::zero();
        for q in 0..2 {
            let mean = if q == 0 { VectorField::unit_e1(n) } else { VectorField::unit_e2(n) };
            let driven = self.geom.apply_conductivity(sigma1, sigma2, &mean);
            let mut rhs = DVector::<Complex64>::zeros(dim);
            for a in 0..dim {
                rhs[a] = -trial[a].inner(&driven);
            }
            let coeffs = lu.solve(&rhs).ok_or(TruncationError::SingularSystem)?;
            let mut field = mean;
            for (a, w) in trial.iter().enumerate() {
                field.add_assign(&w.scale(coeffs[a]));
            }
            let flux = self.geom.apply_conductivity(sigma1, sigma2, &field).mean();
            star.e[0][q] = flux[0];
            star.e[1][q] = flux[1];
        }
        Ok(star)
    }

    /// Weak-contrast series of the in-space effective tensor around the
    /// uniform medium, mirroring the full-grid recursion with the in-space
    /// curl projection. Returns `[C_0 = I, C_1, .., C_order]`.
    pub fn series_within(&self, dir1: &Tensor2, dir2: &Tensor2, order: usize) -> Vec<Tensor2> {
        let n = self.geom.n();
        let mut coeffs = vec![Tensor2::identity()];
        if order == 0 {
            return coeffs;
        }
        coeffs.resize(order + 1, Tensor2::zero());
        for q in 0..2 {
            let mut e = if q == 0 { VectorField::unit_e1(n) } else { VectorField::unit_e2(n) };
            for p in 1..=order {
                let d_e = self.geom.apply_conductivity(dir1, dir2, &e);
                let mean = d_e.mean();
                coeffs[p].e[0][q] = mean[0];
                coeffs[p].e[1][q] = mean[1];
                if p < order {
                    e = self.project_curl(&d_e).scale(Complex64::new(-1.0, 0.0));
                }
            }
        }
        coeffs
    }
}

/// Assemble the closed space of the given chain order.
///
/// The chain spans of both sectors are orthonormalized with a pivoted,
/// rank-revealing sweep at the relative cutoff `span_tol`; the four phase
/// projections of every deepest-order curl-sector chain seeded by the first
/// mean field are then projected onto the complement, and those residuals,
/// together with their quarter-turn images, complete the space. Closure
/// under the four phase projections, the quarter turn, and the mirror
/// reflection is verified numerically on every basis field.
pub fn build_truncated_space(
    geom: &GridGeometry,
    order: usize,
    span_tol: f64,
) -> Result<TruncatedSpace, TruncationError> {
    assert!(span_tol > 0.0, "span tolerance must be positive, got {span_tol}");
    let raw = generate_fields(geom, order)?;
    let n = geom.n();

    let mut basis = vec![VectorField::unit_e1(n), VectorField::unit_e2(n)];
    let curl_candidates: Vec<VectorField> = raw
        .iter()
        .filter(|g| g.kind == ChainKind::CurlFree && !g.negligible)
        .map(|g| g.field.clone())
        .collect();
    let curl_span = pivoted_extension(&mut basis, curl_candidates, span_tol);

    let div_candidates: Vec<VectorField> = raw
        .iter()
        .filter(|g| g.kind == ChainKind::DivFree && !g.negligible)
        .map(|g| g.field.clone())
        .collect();
    let div_span = pivoted_extension(&mut basis, div_candidates, span_tol);

    // Residuals of the deepest-order projections, taken against the chain
    // span assembled so far.
    let top_curl: Vec<&VectorField> = raw
        .iter()
        .filter(|g| {
            g.kind == ChainKind::CurlFree
                && g.seed == 1
                && g.index.order() == order
                && !g.negligible
        })
        .map(|g| &g.field)
        .collect();
    let mut residual_candidates = Vec::with_capacity(4 * top_curl.len());
    for which in PhaseProjector::ALL {
        for field in &top_curl {
            let mut image = geom.project_phase(which, field);
            project_out(&basis, &mut image);
            if image.norm() > RESIDUAL_FLOOR {
                residual_candidates.push(image);
            }
        }
    }
    let quarter_turned: Vec<VectorField> =
        residual_candidates.iter().map(|f| f.rotate_perp()).collect();

    // The residuals extend the curl-like sector; their quarter-turn images
    // extend the divergence-like sector. Splice the residual block into the
    // middle so each sector stays contiguous.
    let mut extension = basis.clone();
    let residual_dim = pivoted_extension(&mut extension, residual_candidates, span_tol);
    let perp_dim = pivoted_extension(&mut extension, quarter_turned, span_tol);
    let mut full: Vec<VectorField> = Vec::with_capacity(extension.len());
    full.extend_from_slice(&extension[..MEAN_DIM + curl_span]);
    full.extend_from_slice(&extension[MEAN_DIM + curl_span + div_span..][..residual_dim]);
    full.extend_from_slice(&extension[MEAN_DIM + curl_span..][..div_span]);
    full.extend_from_slice(&extension[MEAN_DIM + curl_span + div_span + residual_dim..]);

    let space = TruncatedSpace {
        geom: geom.clone(),
        order,
        basis: full,
        curl_dim: curl_span + residual_dim,
        div_dim: div_span + perp_dim,
        closure_residuals: Vec::new(),
    };
    verify_closure(space)
}

/// A named operator whose invariance on the space is verified numerically.
type CheckedOp<'a> = (&'static str, Box<dyn Fn(&VectorField) -> VectorField + Sync + 'a>);

/// Check that every basis field stays inside the space under each operator,
/// recording the worst residual per operator.
fn verify_closure(mut space: TruncatedSpace) -> Result<TruncatedSpace, TruncationError> {
    let geom = space.geom.clone();
    let shift = geom.mirror_shift();
    let ops: Vec<CheckedOp<'_>> = vec![
        ("P1", Box::new(|f| geom.project_phase(PhaseProjector::P1, f))),
        ("P2", Box::new(|f| geom.project_phase(PhaseProjector::P2, f))),
        ("P3", Box::new(|f| geom.project_phase(PhaseProjector::P3, f))),
        ("P4", Box::new(|f| geom.project_phase(PhaseProjector::P4, f))),
        ("quarter_turn", Box::new(|f| f.rotate_perp())),
        ("reflection", Box::new(move |f| f.reflect_shifted(shift))),
    ];
    let mut recorded = Vec::with_capacity(ops.len());
    for (name, op) in &ops {
        let leaks: Vec<f64> = space
            .basis
            .par_iter()
            .map(|b| space.residual(&op(b)))
            .collect();
        let (field, residual) = leaks
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (k, &r)| if r > acc.1 { (k, r) } else { acc });
        if residual > CLOSURE_TOL {
            return Err(TruncationError::ClosureFailure { op: name, field, residual });
        }
        recorded.push((*name, residual));
    }
    space.closure_residuals = recorded;
    Ok(space)
}

/// Term-by-term comparison of the effective-tensor expansion computed on the
/// full grid and wholly inside a truncated space.
#[derive(Debug, Clone)]
pub struct ExpansionComparison {
    /// Full-grid coefficients `[C_0, .., C_order]`.
    pub full: Vec<Tensor2>,
    /// In-space coefficients for the same orders.
    pub truncated: Vec<Tensor2>,
    /// Largest entrywise difference per order.
    pub by_order: Vec<f64>,
    /// Largest entry of `by_order`.
    pub max_discrepancy: f64,
}

/// Build the space of the given order and compare the weak-contrast
/// expansion of the effective tensor on the full grid against the one
/// computed wholly inside the space, through that order.
pub fn compare_expansions(
    geom: &GridGeometry,
    order: usize,
    dir1: &Tensor2,
    dir2: &Tensor2,
) -> Result<ExpansionComparison, TruncationError> {
    let space = build_truncated_space(geom, order, DEFAULT_SPAN_TOL)?;
    Ok(expansion_comparison(&space, dir1, dir2))
}

/// Compare expansions for an already-built space, through its chain order.
pub fn expansion_comparison(
    space: &TruncatedSpace,
    dir1: &Tensor2,
    dir2: &Tensor2,
) -> ExpansionComparison {
    let order = space.order();
    let full = series_coefficients(space.geometry(), dir1, dir2, order);
    let truncated = space.series_within(dir1, dir2, order);
    let by_order: Vec<f64> =
        full.iter().zip(&truncated).map(|(a, b)| a.sub(b).max_abs()).collect();
    let max_discrepancy = by_order.iter().fold(0.0f64, |m, &d| m.max(d));
    ExpansionComparison { full, truncated, by_order, max_discrepancy }
}
