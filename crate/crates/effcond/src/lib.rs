//! Effective conductivity of 2-D periodic two-phase composites.
//!
//! Given a pixelated periodic microstructure occupied by two (possibly
//! complex, possibly non-symmetric) conductivity tensors, this crate computes
//! the effective conductivity tensor three independent ways:
//!
//! * a direct spectral cell-problem solver ([`solver`]) — the reference;
//! * closed-form evaluation from a finite canonical representation of the
//!   microstructure extracted once from its geometry ([`rep`], [`approx`]);
//! * series expansion on an operator-closed truncated subspace
//!   ([`truncation`]).
//!
//! Supporting modules cover hierarchical-laminate models ([`laminates`]) and
//! recovery of spectral data from effective-tensor samples ([`recovery`]).

// Index arithmetic over small fixed-size grids and 2x2 tensors reads better
// with explicit indices than with iterator/enumerate chains.
#![allow(clippy::needless_range_loop)]

pub mod approx;
pub mod fields;
#[cfg(test)]
pub(crate) mod testutil;
pub mod laminates;
pub mod recovery;
pub mod rep;
pub mod solver;
pub mod tensor;
pub mod truncation;

pub use approx::{
    admissible_phase_rotation, l_star_coupled, sigma11_diagonal, sigma11_from_basis,
    sigma11_from_couplings, sigma_star_diagonal, sigma_star_full, ApproxError, CoupledTensor,
    DiagonalTriple, ReducedProjections,
};
pub use fields::{GridGeometry, PhaseProjector, Spectral, VectorField};
pub use laminates::{
    check_sum_rules, eval_rational_diag, eval_sstar, phase_interchange_residual,
    polycrystal_laminate, LaminateError, LaminateProgram, LaminateStep, MatrixRationalRep,
    RationalDiagRep, SStarDiagnostics, SStarRep, SumRuleResiduals,
};
pub use recovery::{
    default_sample_grid, recover_spectrum, RecoveredSpectrum, RecoveryError, SpectralSample,
};
pub use rep::{
    build_eigenbasis, curl_free_spectrum, extract_rep, missed_mode_coupling, sampled_gram_with,
    validate_rep, CanonicalRep, EigenMode, RepError, SymmetricEigenbasis,
};
pub use solver::{
    series_coefficients, sigma11_inverse_direct, solve_effective, SolveError, SolveOptions,
    SolveReport,
};
pub use tensor::{parse_complex, Tensor2};
pub use truncation::{
    build_truncated_space, compare_expansions, expansion_comparison, generate_fields,
    ChainKind, ExpansionComparison, GeneratedField, MultiIndex, TruncatedSpace,
    TruncationError,
};
