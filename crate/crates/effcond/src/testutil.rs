//! Deterministic random inputs shared across the crate's unit tests.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::fields::{GridGeometry, VectorField};
use crate::tensor::Tensor2;

/// Deterministic pseudo-random complex field with entries in the unit box.
pub(crate) fn random_field(n: usize, seed: u64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = VectorField::zeros(n);
    for v in f.h1.iter_mut().chain(f.h2.iter_mut()) {
        *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    f
}

/// Deterministic pseudo-random mirror-symmetric geometry: cells are sampled
/// per mirror orbit so that `chi[(n - i) mod n][j]` always equals `chi[i][j]`.
/// Regenerates until both phases are present.
pub(crate) fn random_symmetric_geometry(n: usize, seed: u64) -> GridGeometry {
    random_symmetric_geometry_with_shift(n, 0, seed)
}

/// Deterministic pseudo-random geometry symmetric under the shifted row
/// mirror `i -> (shift - i) mod n`. Cells are sampled per mirror orbit;
/// regenerates until both phases are present and the detected shift matches.
pub(crate) fn random_symmetric_geometry_with_shift(
    n: usize,
    shift: usize,
    seed: u64,
) -> GridGeometry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut chi = vec![2u8; n * n];
        for i in 0..n {
            let mirror = (shift + n - i % n) % n;
            for j in 0..n {
                if chi[i * n + j] == 2 {
                    let v = rng.gen_bool(0.5) as u8;
                    chi[i * n + j] = v;
                    chi[mirror * n + j] = v;
                }
            }
        }
        if let Ok(geom) = GridGeometry::from_chi(n, chi) {
            if geom.mirror_shift() == shift {
                return geom;
            }
        }
    }
}

/// Largest coupling (through any phase projector, plain or quarter-turned)
/// between the model span and the antisymmetric modes it cannot reach, below
/// which [`random_structured_geometry`] accepts a candidate.
pub(crate) const STRUCTURED_COUPLING_TOL: f64 = 1e-10;

/// Deterministic pseudo-random geometry on which the finite canonical model
/// is exact for arbitrary phase tensors.
///
/// Odd mirror shifts are cycled and candidates re-drawn until (a) canonical
/// extraction succeeds, (b) no retained eigenvalue needed clamping, and
/// (c) the unreachable antisymmetric modes are decoupled from the model
/// space ([`crate::rep::missed_mode_coupling`] below
/// [`STRUCTURED_COUPLING_TOL`]). Random mirror-symmetric geometries satisfy
/// this only occasionally (roughly one draw in twenty at `n = 8`), so the
/// helper centralizes the rejection sampling the exactness tests rely on.
pub(crate) fn random_structured_geometry(n: usize, seed: u64) -> GridGeometry {
    use crate::rep::{
        build_eigenbasis, extract_rep, missed_mode_coupling, DEFAULT_CLAMP_EPS, DEFAULT_RANK_TOL,
    };
    const ODD_SHIFTS: [usize; 4] = [1, 3, 5, 7];
    const MAX_ATTEMPTS: u64 = 2000;
    for attempt in 0..MAX_ATTEMPTS {
        let shift = ODD_SHIFTS[(attempt % ODD_SHIFTS.len() as u64) as usize] % n;
        let inner = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(attempt);
        let geom = random_symmetric_geometry_with_shift(n, shift, inner);
        let Ok(eigen) = build_eigenbasis(&geom, None, DEFAULT_CLAMP_EPS) else {
            continue;
        };
        if eigen.modes.iter().any(|m| m.clamped) {
            continue;
        }
        if extract_rep(&geom, &eigen, DEFAULT_RANK_TOL).is_err() {
            continue;
        }
        match missed_mode_coupling(&geom, &eigen) {
            Ok(c) if c <= STRUCTURED_COUPLING_TOL => return geom,
            _ => continue,
        }
    }
    panic!("no structured geometry found for n = {n}, seed = {seed} in {MAX_ATTEMPTS} draws");
}

/// Deterministic random pair of admissible phase tensors: complex entries,
/// generally non-symmetric, redrawn until both Hermitian real parts are
/// safely positive definite so the reference solver converges.
pub(crate) fn random_conductivity_pair(seed: u64) -> (Tensor2, Tensor2) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| loop {
        let t = Tensor2::new(
            Complex64::new(rng.gen_range(1.0..3.0), rng.gen_range(-0.4..0.4)),
            Complex64::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.3..0.3)),
            Complex64::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.3..0.3)),
            Complex64::new(rng.gen_range(1.0..3.0), rng.gen_range(-0.4..0.4)),
        );
        if t.hermitian_min_eig() > 0.3 {
            return t;
        }
    };
    let s1 = draw(&mut rng);
    let s2 = draw(&mut rng);
    (s1, s2)
}

/// Dense Galerkin solve of the cell problem on the span of the retained
/// eigenfields, their quarter-turn partners, and the second mean direction.
///
/// The retained eigenfields carry their couplings `beta` to the first mean
/// direction, so the two loading vectors are `beta` and the unit vector on
/// the second mean direction; the effective tensor is the inverse of the
/// 2x2 compression of the solves onto those loadings. On geometries where
/// the unreachable antisymmetric modes decouple this matches the transform
/// solver to near machine precision, which makes it the reference the
/// closed-form evaluators are compared against.
pub(crate) fn galerkin_effective(
    geom: &GridGeometry,
    eigen: &crate::rep::SymmetricEigenbasis,
    s1: &Tensor2,
    s2: &Tensor2,
) -> Tensor2 {
    let n = geom.n();
    let mut span: Vec<VectorField> = eigen.modes.iter().map(|md| md.field.clone()).collect();
    span.extend(eigen.modes.iter().filter_map(|md| md.partner.clone()));
    span.push(VectorField::unit_e2(n));
    let dim = span.len();
    let mut u1_coord = DVector::<Complex64>::zeros(dim);
    for (i, md) in eigen.modes.iter().enumerate() {
        u1_coord[i] = Complex64::new(md.beta, 0.0);
    }
    let mut u2_coord = DVector::<Complex64>::zeros(dim);
    u2_coord[dim - 1] = Complex64::new(1.0, 0.0);

    let mut mat = DMatrix::<Complex64>::zeros(dim, dim);
    let images: Vec<VectorField> =
        span.iter().map(|w| geom.apply_conductivity(s1, s2, w)).collect();
    for a in 0..dim {
        for b in 0..dim {
            mat[(a, b)] = span[a].inner(&images[b]);
        }
    }
    let lu = mat.lu();
    let x1 = lu.solve(&u1_coord).expect("Galerkin matrix must be invertible");
    let x2 = lu.solve(&u2_coord).expect("Galerkin matrix must be invertible");
    let inv_star = Tensor2::new(
        u1_coord.dotc(&x1),
        u1_coord.dotc(&x2),
        u2_coord.dotc(&x1),
        u2_coord.dotc(&x2),
    );
    inv_star.inverse().expect("compressed tensor must be invertible")
}
