//! Periodic two-component fields on the unit cell and the operator toolkit.
//!
//! The state space is the set of square-integrable 2-component complex fields
//! on an n x n pixel discretization of the periodic unit cell, with inner
//! product `(a, b) = (1/n^2) sum conj(a) . b` (conjugate-linear in the first
//! slot, so the constant field (1, 0) has unit norm). On top of it this
//! module provides the operators everything else is built from:
//!
//! * `Spectral::lambda1` / `lambda2` — the orthogonal splitting of a field
//!   into a curl-free part (gradients plus the (·, 0) constants) and a
//!   divergence-free part, computed mode-by-mode in Fourier space;
//! * `Spectral::gamma1` / `gamma2` — the same projections with the constant
//!   mode removed (zero-mean gradients / zero-mean divergence-free fields);
//! * phase projections `P1..P4` — restriction to one Cartesian component on
//!   one phase of the microstructure;
//! * the pointwise quarter-turn `rotate_perp` and the mirror `reflect`.
//!
//! Geometries are binary indicator bitmaps. Loading validates that both
//! phases are present and that the bitmap has a mirror symmetry across some
//! column of the lattice (the symmetry the eigenstructure machinery needs);
//! the detected mirror shift is stored with the geometry.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Smallest supported grid edge.
pub const MIN_GRID: usize = 4;
/// Largest supported grid edge (keeps accidental huge allocations out).
pub const MAX_GRID: usize = 4096;

/// Errors raised while loading or validating a geometry.
#[derive(Debug, Error)]
pub enum GeometryError {
    /// Grid edge is not an even number in `[MIN_GRID, MAX_GRID]`.
    #[error("grid edge {0} must be even and within [{MIN_GRID}, {MAX_GRID}]")]
    BadSize(usize),
    /// Indicator data has the wrong length or a non-binary entry.
    #[error("indicator bitmap malformed: {0}")]
    BadIndicator(String),
    /// One of the phases occupies no pixels at all.
    #[error("degenerate geometry: phase {0} occupies no pixels")]
    DegeneratePhase(u8),
    /// No column mirror symmetry exists; reports the first cell at which the
    /// canonical mirror `i -> (n - i) mod n` fails.
    #[error("geometry has no column mirror symmetry; canonical mirror first fails at cell ({0}, {1})")]
    ReflectionSymmetryViolated(usize, usize),
    /// I/O failure while reading a geometry file.
    #[error("geometry file: {0}")]
    Io(#[from] std::io::Error),
    /// JSON parse failure while reading a geometry file.
    #[error("geometry JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// On-disk form of a geometry: `{"n": 8, "chi": [[...], ...]}` with `chi[i][j]`
/// the indicator of phase 1 at cell `(i, j)` (row index `i` is the first
/// coordinate).
#[derive(Serialize, Deserialize)]
struct GeometryFile {
    n: usize,
    chi: Vec<Vec<u8>>,
}

/// A validated n x n two-phase geometry.
///
/// `chi[i*n + j] == 1` marks phase 1 at cell `(i, j)`. Geometries are
/// immutable after construction; the volume fraction and mirror shift are
/// computed once at load time.
#[derive(Debug, Clone)]
pub struct GridGeometry {
    n: usize,
    chi: Vec<u8>,
    volume_fraction: f64,
    mirror_shift: usize,
}

impl GridGeometry {
    /// Build from a flat row-major indicator vector of length `n * n`.
    pub fn from_chi(n: usize, chi: Vec<u8>) -> Result<Self, GeometryError> {
        if !(MIN_GRID..=MAX_GRID).contains(&n) || !n.is_multiple_of(2) {
            return Err(GeometryError::BadSize(n));
        }
        if chi.len() != n * n {
            return Err(GeometryError::BadIndicator(format!(
                "expected {} entries, found {}",
                n * n,
                chi.len()
            )));
        }
        if let Some(pos) = chi.iter().position(|&v| v > 1) {
            return Err(GeometryError::BadIndicator(format!(
                "entry at flat index {pos} is {} (must be 0 or 1)",
                chi[pos]
            )));
        }
        let ones: usize = chi.iter().map(|&v| v as usize).sum();
        if ones == 0 {
            return Err(GeometryError::DegeneratePhase(1));
        }
        if ones == n * n {
            return Err(GeometryError::DegeneratePhase(2));
        }
        let mirror_shift = match Self::detect_mirror(n, &chi) {
            Some(s) => s,
            None => {
                let (i, j) = Self::first_mirror_defect(n, &chi);
                return Err(GeometryError::ReflectionSymmetryViolated(i, j));
            }
        };
        let volume_fraction = ones as f64 / (n * n) as f64;
        Ok(GridGeometry { n, chi, volume_fraction, mirror_shift })
    }

    /// Build from nested rows (`rows[i][j]`).
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self, GeometryError> {
        let n = rows.len();
        let mut chi = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GeometryError::BadIndicator(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            chi.extend_from_slice(row);
        }
        Self::from_chi(n, chi)
    }

    /// Parse the JSON geometry format.
    pub fn from_json_str(text: &str) -> Result<Self, GeometryError> {
        let file: GeometryFile = serde_json::from_str(text)?;
        if file.chi.len() != file.n {
            return Err(GeometryError::BadIndicator(format!(
                "declared n = {} but chi has {} rows",
                file.n,
                file.chi.len()
            )));
        }
        Self::from_rows(file.chi)
    }

    /// Load a geometry JSON file from disk.
    pub fn from_path(path: &Path) -> Result<Self, GeometryError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Serialize to the JSON geometry format.
    pub fn to_json_string(&self) -> String {
        let rows: Vec<Vec<u8>> = (0..self.n)
            .map(|i| self.chi[i * self.n..(i + 1) * self.n].to_vec())
            .collect();
        serde_json::to_string_pretty(&GeometryFile { n: self.n, chi: rows })
            .expect("geometry serialization cannot fail")
    }

    /// Find a shift `s` such that `chi[(s - i) mod n][j] == chi[i][j]`
    /// everywhere, preferring the canonical `s = 0`.
    fn detect_mirror(n: usize, chi: &[u8]) -> Option<usize> {
        (0..n).find(|&s| {
            (0..n).all(|i| {
                let im = (s + n - i) % n;
                im >= i || (0..n).all(|j| chi[im * n + j] == chi[i * n + j])
            })
        })
    }

    /// First cell (lexicographic) at which the canonical `s = 0` mirror fails.
    fn first_mirror_defect(n: usize, chi: &[u8]) -> (usize, usize) {
        for i in 0..n {
            for j in 0..n {
                let im = (n - i) % n;
                if chi[im * n + j] != chi[i * n + j] {
                    return (i, j);
                }
            }
        }
        unreachable!("called only when the canonical mirror fails somewhere")
    }

    /// Grid edge n.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Fraction of cells occupied by phase 1.
    pub fn volume_fraction(&self) -> f64 {
        self.volume_fraction
    }

    /// The shift `s` of the detected column mirror `i -> (s - i) mod n`
    /// (0 when the geometry is symmetric under the canonical mirror).
    pub fn mirror_shift(&self) -> usize {
        self.mirror_shift
    }

    /// Indicator value at cell `(i, j)`; 1 means phase 1.
    pub fn chi_at(&self, i: usize, j: usize) -> u8 {
        self.chi[i * self.n + j]
    }

    /// Flat row-major indicator data.
    pub fn chi(&self) -> &[u8] {
        &self.chi
    }

    /// Deterministic byte encoding (edge plus bitmap), used for content hashes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(8 + self.chi.len());
        bytes.extend_from_slice(&(self.n as u64).to_le_bytes());
        bytes.extend_from_slice(&self.chi);
        bytes
    }

    /// Restrict `f` to one Cartesian component on one phase.
    pub fn project_phase(&self, which: PhaseProjector, f: &VectorField) -> VectorField {
        assert_eq!(f.n, self.n, "field grid must match geometry grid");
        let mut out = VectorField::zeros(self.n);
        let (on_phase1, first_component) = match which {
            PhaseProjector::P1 => (true, true),
            PhaseProjector::P2 => (true, false),
            PhaseProjector::P3 => (false, true),
            PhaseProjector::P4 => (false, false),
        };
        let (src, dst) = if first_component {
            (&f.h1, &mut out.h1)
        } else {
            (&f.h2, &mut out.h2)
        };
        for (idx, (&c, d)) in self.chi.iter().zip(dst.iter_mut()).enumerate() {
            let in_phase1 = c == 1;
            if in_phase1 == on_phase1 {
                *d = src[idx];
            }
        }
        out
    }

    /// Multiply by the indicator of phase 2 on both components
    /// (the sum of the two phase-2 projections).
    pub fn restrict_phase2(&self, f: &VectorField) -> VectorField {
        assert_eq!(f.n, self.n, "field grid must match geometry grid");
        let mut out = VectorField::zeros(self.n);
        for (idx, &c) in self.chi.iter().enumerate() {
            if c == 0 {
                out.h1[idx] = f.h1[idx];
                out.h2[idx] = f.h2[idx];
            }
        }
        out
    }

    /// Multiply by the indicator of phase 1 on both components.
    pub fn restrict_phase1(&self, f: &VectorField) -> VectorField {
        assert_eq!(f.n, self.n, "field grid must match geometry grid");
        let mut out = VectorField::zeros(self.n);
        for (idx, &c) in self.chi.iter().enumerate() {
            if c == 1 {
                out.h1[idx] = f.h1[idx];
                out.h2[idx] = f.h2[idx];
            }
        }
        out
    }

    /// Apply the two-phase conductivity `sigma(x) = chi sigma1 + (1-chi) sigma2`
    /// pointwise.
    pub fn apply_conductivity(
        &self,
        sigma1: &crate::tensor::Tensor2,
        sigma2: &crate::tensor::Tensor2,
        f: &VectorField,
    ) -> VectorField {
        assert_eq!(f.n, self.n, "field grid must match geometry grid");
        let mut out = VectorField::zeros(self.n);
        for (idx, &c) in self.chi.iter().enumerate() {
            let t = if c == 1 { sigma1 } else { sigma2 };
            let v = t.apply([f.h1[idx], f.h2[idx]]);
            out.h1[idx] = v[0];
            out.h2[idx] = v[1];
        }
        out
    }
}

/// Which (phase, component) pair a phase projection keeps.
///
/// `P1`/`P2` keep the first/second component on phase 1; `P3`/`P4` the
/// first/second component on phase 2. The four projections are mutually
/// orthogonal and sum to the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseProjector {
    /// Component 1 on phase 1.
    P1,
    /// Component 2 on phase 1.
    P2,
    /// Component 1 on phase 2.
    P3,
    /// Component 2 on phase 2.
    P4,
}

impl PhaseProjector {
    /// All four projections in order.
    pub const ALL: [PhaseProjector; 4] =
        [PhaseProjector::P1, PhaseProjector::P2, PhaseProjector::P3, PhaseProjector::P4];
}

/// A 2-component complex field sampled on the n x n periodic grid.
///
/// Component arrays are row-major: `h1[i*n + j]` is the first component at
/// cell `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    n: usize,
    /// First Cartesian component.
    pub h1: Vec<Complex64>,
    /// Second Cartesian component.
    pub h2: Vec<Complex64>,
}

impl VectorField {
    /// The zero field.
    pub fn zeros(n: usize) -> Self {
        let z = vec![Complex64::default(); n * n];
        VectorField { n, h1: z.clone(), h2: z }
    }

    /// A constant field with the given component values.
    pub fn constant(n: usize, value: [Complex64; 2]) -> Self {
        VectorField {
            n,
            h1: vec![value[0]; n * n],
            h2: vec![value[1]; n * n],
        }
    }

    /// The unit constant field along the first axis (unit norm).
    pub fn unit_e1(n: usize) -> Self {
        VectorField::constant(n, [Complex64::new(1.0, 0.0), Complex64::default()])
    }

    /// The unit constant field along the second axis.
    pub fn unit_e2(n: usize) -> Self {
        VectorField::constant(n, [Complex64::default(), Complex64::new(1.0, 0.0)])
    }

    /// Grid edge.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Inner product, conjugate-linear in `self`:
    /// `(1/n^2) sum conj(self) . other`.
    pub fn inner(&self, other: &VectorField) -> Complex64 {
        assert_eq!(self.n, other.n, "fields must share a grid");
        let mut acc = Complex64::default();
        for (a, b) in self.h1.iter().zip(&other.h1) {
            acc += a.conj() * b;
        }
        for (a, b) in self.h2.iter().zip(&other.h2) {
            acc += a.conj() * b;
        }
        acc / (self.n * self.n) as f64
    }

    /// Norm induced by [`VectorField::inner`].
    pub fn norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    /// Cell average of both components.
    pub fn mean(&self) -> [Complex64; 2] {
        let scale = 1.0 / (self.n * self.n) as f64;
        let sum1: Complex64 = self.h1.iter().sum();
        let sum2: Complex64 = self.h2.iter().sum();
        [sum1 * scale, sum2 * scale]
    }

    /// `self + other`.
    pub fn add(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    /// `self - other`.
    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    /// `self * s`.
    pub fn scale(&self, s: Complex64) -> VectorField {
        let mut out = self.clone();
        out.scale_assign(s);
        out
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &VectorField) {
        assert_eq!(self.n, other.n, "fields must share a grid");
        for (a, b) in self.h1.iter_mut().zip(&other.h1) {
            *a += b;
        }
        for (a, b) in self.h2.iter_mut().zip(&other.h2) {
            *a += b;
        }
    }

    /// In-place `self *= s`.
    pub fn scale_assign(&mut self, s: Complex64) {
        for v in self.h1.iter_mut().chain(self.h2.iter_mut()) {
            *v *= s;
        }
    }

    /// In-place `self += a * other`.
    pub fn axpy(&mut self, a: Complex64, other: &VectorField) {
        assert_eq!(self.n, other.n, "fields must share a grid");
        for (x, y) in self.h1.iter_mut().zip(&other.h1) {
            *x += a * y;
        }
        for (x, y) in self.h2.iter_mut().zip(&other.h2) {
            *x += a * y;
        }
    }

    /// Pointwise quarter turn `(h1, h2) -> (-h2, h1)`.
    pub fn rotate_perp(&self) -> VectorField {
        VectorField {
            n: self.n,
            h1: self.h2.iter().map(|v| -v).collect(),
            h2: self.h1.clone(),
        }
    }

    /// Mirror across the canonical column: `g1(i,j) = h1((n-i) mod n, j)`,
    /// `g2(i,j) = -h2((n-i) mod n, j)`. An involution that commutes with the
    /// curl-free/divergence-free splitting and anti-commutes with
    /// [`VectorField::rotate_perp`].
    pub fn reflect(&self) -> VectorField {
        self.reflect_shifted(0)
    }

    /// Mirror across the column at shift `s`: indices map `i -> (s - i) mod n`.
    /// Used with a geometry's own [`GridGeometry::mirror_shift`].
    pub fn reflect_shifted(&self, s: usize) -> VectorField {
        let n = self.n;
        let mut out = VectorField::zeros(n);
        for i in 0..n {
            let im = (s + n - i) % n;
            for j in 0..n {
                out.h1[i * n + j] = self.h1[im * n + j];
                out.h2[i * n + j] = -self.h2[im * n + j];
            }
        }
        out
    }
}

/// FFT-backed spectral projections for one grid size.
///
/// Holds the forward/inverse FFT plans; all methods are `&self` and
/// allocate their own scratch, so one instance can serve a whole run.
pub struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Which constant (zero-frequency) behavior a projection keeps.
#[derive(Clone, Copy, PartialEq)]
enum MeanPolicy {
    /// Keep the projection's own constant part.
    Keep,
    /// Zero the constant part entirely.
    Drop,
}

impl Spectral {
    /// Build plans for an n x n grid.
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Spectral {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    /// Grid edge the plans were built for.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalized 2-D FFT in place (`inverse = false`: forward).
    pub(crate) fn fft2d(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        // Rows are contiguous; columns are handled via a transpose round trip.
        for row in data.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut scratch = vec![Complex64::default(); n * n];
        transpose(n, data, &mut scratch);
        for row in scratch.chunks_exact_mut(n) {
            plan.process(row);
        }
        transpose(n, &scratch, data);
    }

    /// Unit vector spanning the curl-free line at Fourier index `(a, b)`.
    ///
    /// Away from the Nyquist frequency this is the unit vector along the
    /// signed frequency `k`. A Nyquist component is direction-ambiguous
    /// (`+n/2` and `-n/2` alias to the same grid mode), and keeping either
    /// signed choice would break the mirror symmetry of the projection; it is
    /// resolved symmetrically — the centered-difference derivative of a
    /// Nyquist oscillation vanishes, so a mixed mode's gradient direction
    /// follows its non-Nyquist component. Pure Nyquist modes stay gradients
    /// along their own axis so that the curl-free line is one-dimensional at
    /// every nonzero mode (which the quarter-turn intertwining relies on).
    pub(crate) fn mode_direction(n: usize, a: usize, b: usize) -> (f64, f64) {
        debug_assert!(a != 0 || b != 0, "the zero mode has no direction");
        let ny = n / 2;
        match (a == ny, b == ny) {
            (true, true) => (1.0, 0.0),
            (true, false) => {
                if b == 0 {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            (false, true) => {
                if a == 0 {
                    (0.0, 1.0)
                } else {
                    (1.0, 0.0)
                }
            }
            (false, false) => {
                let signed = |idx: usize| {
                    if idx <= ny {
                        idx as f64
                    } else {
                        idx as f64 - n as f64
                    }
                };
                let (k1, k2) = (signed(a), signed(b));
                let norm = (k1 * k1 + k2 * k2).sqrt();
                (k1 / norm, k2 / norm)
            }
        }
    }

    /// Shared core of the four spectral projections: per mode `k != 0` keep
    /// either the component along the curl-free line or across it
    /// (divergence-free); at `k = 0` keep the matching constant or drop it.
    fn project(&self, f: &VectorField, along: bool, mean: MeanPolicy) -> VectorField {
        assert_eq!(f.n, self.n, "field grid must match plan grid");
        let n = self.n;
        let mut g1 = f.h1.clone();
        let mut g2 = f.h2.clone();
        self.fft2d(&mut g1, false);
        self.fft2d(&mut g2, false);
        for a in 0..n {
            for b in 0..n {
                let idx = a * n + b;
                if a == 0 && b == 0 {
                    // Constant mode: the curl-free side owns the (·, 0)
                    // constants, the divergence-free side the (0, ·) ones.
                    match (along, mean) {
                        (_, MeanPolicy::Drop) => {
                            g1[idx] = Complex64::default();
                            g2[idx] = Complex64::default();
                        }
                        (true, MeanPolicy::Keep) => g2[idx] = Complex64::default(),
                        (false, MeanPolicy::Keep) => g1[idx] = Complex64::default(),
                    }
                    continue;
                }
                let (d1, d2) = Self::mode_direction(n, a, b);
                let along_k = d1 * g1[idx] + d2 * g2[idx];
                if along {
                    g1[idx] = along_k * d1;
                    g2[idx] = along_k * d2;
                } else {
                    g1[idx] -= along_k * d1;
                    g2[idx] -= along_k * d2;
                }
            }
        }
        self.fft2d(&mut g1, true);
        self.fft2d(&mut g2, true);
        let scale = Complex64::new(1.0 / (n * n) as f64, 0.0);
        for v in g1.iter_mut().chain(g2.iter_mut()) {
            *v *= scale;
        }
        VectorField { n, h1: g1, h2: g2 }
    }

    /// Projection onto curl-free fields plus the first-axis constants.
    pub fn lambda1(&self, f: &VectorField) -> VectorField {
        self.project(f, true, MeanPolicy::Keep)
    }

    /// Projection onto divergence-free fields plus the second-axis constants
    /// (the orthogonal complement of [`Spectral::lambda1`]).
    pub fn lambda2(&self, f: &VectorField) -> VectorField {
        self.project(f, false, MeanPolicy::Keep)
    }

    /// Projection onto zero-mean gradients (curl-free, no constant part).
    pub fn gamma1(&self, f: &VectorField) -> VectorField {
        self.project(f, true, MeanPolicy::Drop)
    }

    /// Projection onto zero-mean divergence-free fields.
    pub fn gamma2(&self, f: &VectorField) -> VectorField {
        self.project(f, false, MeanPolicy::Drop)
    }
}

/// Out-of-place square transpose (`dst[j*n + i] = src[i*n + j]`).
fn transpose(n: usize, src: &[Complex64], dst: &mut [Complex64]) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2;
    use crate::testutil::{random_field, random_symmetric_geometry};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn field_dist(a: &VectorField, b: &VectorField) -> f64 {
        a.sub(b).norm()
    }

    #[test]
    fn inner_product_is_conjugate_linear_in_first_slot() {
        let n = 8;
        let u1 = VectorField::unit_e1(n);
        assert!((u1.norm() - 1.0).abs() < 1e-15, "constant (1,0) must have unit norm");
        let iu1 = u1.scale(c(0.0, 1.0));
        let val = iu1.inner(&u1);
        assert!(
            (val - c(0.0, -1.0)).norm() < 1e-15,
            "conjugation must act on the first slot: got {val}"
        );
    }

    #[test]
    fn spectral_projections_are_complementary_idempotent_projections() {
        let spectral = Spectral::new(16);
        let f = random_field(16, 1);
        let l1 = spectral.lambda1(&f);
        let l2 = spectral.lambda2(&f);
        assert!(field_dist(&l1.add(&l2), &f) < 1e-13, "projections must sum to identity");
        assert!(field_dist(&spectral.lambda1(&l1), &l1) < 1e-13, "lambda1 idempotent");
        assert!(field_dist(&spectral.lambda2(&l2), &l2) < 1e-13, "lambda2 idempotent");
        assert!(l1.inner(&l2).norm() < 1e-13, "the two ranges are orthogonal");
        // Self-adjointness.
        let g = random_field(16, 2);
        let lhs = g.inner(&spectral.lambda1(&f));
        let rhs = spectral.lambda1(&g).inner(&f);
        assert!((lhs - rhs).norm() < 1e-13, "lambda1 must be self-adjoint");
    }

    #[test]
    fn constants_split_between_projections() {
        let spectral = Spectral::new(8);
        let u1 = VectorField::unit_e1(8);
        let u2 = VectorField::unit_e2(8);
        assert!(field_dist(&spectral.lambda1(&u1), &u1) < 1e-14);
        assert!(spectral.lambda1(&u2).norm() < 1e-14);
        assert!(field_dist(&spectral.lambda2(&u2), &u2) < 1e-14);
        assert!(spectral.gamma1(&u1).norm() < 1e-14, "zero-mean projection kills constants");
        assert!(spectral.gamma2(&u2).norm() < 1e-14);
    }

    #[test]
    fn zero_mean_projections_remove_means_only() {
        let spectral = Spectral::new(12);
        let f = random_field(12, 3);
        let g1 = spectral.gamma1(&f);
        let m = g1.mean();
        assert!(m[0].norm() < 1e-13 && m[1].norm() < 1e-13, "gamma1 output has zero mean");
        // gamma1 differs from lambda1 exactly by the retained constant.
        let l1 = spectral.lambda1(&f);
        let diff = l1.sub(&g1);
        let mean1 = f.mean()[0];
        assert!(field_dist(&diff, &VectorField::constant(12, [mean1, c(0.0, 0.0)])) < 1e-13);
    }

    #[test]
    fn quarter_turn_intertwines_the_splitting() {
        let spectral = Spectral::new(16);
        let f = random_field(16, 4);
        // R lambda1 = lambda2 R.
        let lhs = spectral.lambda1(&f).rotate_perp();
        let rhs = spectral.lambda2(&f.rotate_perp());
        assert!(field_dist(&lhs, &rhs) < 1e-13, "quarter turn must swap the two ranges");
        // R is an isometry with R^2 = -I.
        assert!((f.rotate_perp().norm() - f.norm()).abs() < 1e-13);
        assert!(field_dist(&f.rotate_perp().rotate_perp(), &f.scale(c(-1.0, 0.0))) < 1e-15);
    }

    #[test]
    fn mirror_is_an_involution_commuting_with_the_splitting() {
        let spectral = Spectral::new(16);
        let f = random_field(16, 5);
        for s in [0usize, 3, 8] {
            let reflected = f.reflect_shifted(s);
            assert!(
                field_dist(&reflected.reflect_shifted(s), &f) < 1e-15,
                "mirror with shift {s} must be an involution"
            );
            // Commutes with lambda1.
            let lhs = spectral.lambda1(&reflected);
            let rhs = spectral.lambda1(&f).reflect_shifted(s);
            assert!(field_dist(&lhs, &rhs) < 1e-13, "mirror (shift {s}) must commute with lambda1");
            // Anti-commutes with the quarter turn.
            let anti = reflected.rotate_perp().add(&f.rotate_perp().reflect_shifted(s));
            assert!(anti.norm() < 1e-15, "mirror (shift {s}) must anti-commute with the quarter turn");
            // Self-adjoint.
            let g = random_field(16, 6);
            let lhs = g.inner(&f.reflect_shifted(s));
            let rhs = g.reflect_shifted(s).inner(&f);
            assert!((lhs - rhs).norm() < 1e-14, "mirror (shift {s}) must be self-adjoint");
        }
    }

    #[test]
    fn phase_projections_partition_the_identity() {
        let geom = random_symmetric_geometry(8, 7);
        let f = random_field(8, 8);
        let mut sum = VectorField::zeros(8);
        for which in PhaseProjector::ALL {
            let p = geom.project_phase(which, &f);
            sum.add_assign(&p);
            assert!(
                field_dist(&geom.project_phase(which, &p), &p) < 1e-15,
                "{which:?} must be idempotent"
            );
            for other in PhaseProjector::ALL {
                if other != which {
                    let q = geom.project_phase(other, &f);
                    assert!(q.inner(&p).norm() < 1e-15, "{which:?} and {other:?} must be orthogonal");
                }
            }
        }
        assert!(field_dist(&sum, &f) < 1e-15, "the four phase projections must sum to identity");
    }

    #[test]
    fn quarter_turn_swaps_component_projections() {
        let geom = random_symmetric_geometry(8, 9);
        let f = random_field(8, 10);
        // R P1 = P2 R and R P3 = P4 R.
        let lhs = geom.project_phase(PhaseProjector::P1, &f).rotate_perp();
        let rhs = geom.project_phase(PhaseProjector::P2, &f.rotate_perp());
        assert!(field_dist(&lhs, &rhs) < 1e-15);
        let lhs = geom.project_phase(PhaseProjector::P3, &f).rotate_perp();
        let rhs = geom.project_phase(PhaseProjector::P4, &f.rotate_perp());
        assert!(field_dist(&lhs, &rhs) < 1e-15);
    }

    #[test]
    fn mirror_symmetric_geometry_commutes_with_phase_projections() {
        let geom = random_symmetric_geometry(8, 11);
        let s = geom.mirror_shift();
        let f = random_field(8, 12);
        for which in PhaseProjector::ALL {
            let lhs = geom.project_phase(which, &f).reflect_shifted(s);
            let rhs = geom.project_phase(which, &f.reflect_shifted(s));
            assert!(
                field_dist(&lhs, &rhs) < 1e-15,
                "mirror must commute with {which:?} for a symmetric geometry"
            );
        }
    }

    #[test]
    fn pixel_checkerboard_has_canonical_mirror() {
        let n = 8;
        let chi: Vec<u8> = (0..n * n).map(|idx| ((idx / n + idx % n) % 2) as u8).collect();
        let geom = GridGeometry::from_chi(n, chi).expect("pixel checkerboard is valid");
        assert_eq!(geom.mirror_shift(), 0);
        assert!((geom.volume_fraction() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn block_checkerboard_is_accepted_with_offset_mirror() {
        let n = 8;
        let chi: Vec<u8> = (0..n * n)
            .map(|idx| (((idx / n) * 2 / n + (idx % n) * 2 / n) % 2) as u8)
            .collect();
        let geom = GridGeometry::from_chi(n, chi)
            .expect("block checkerboard has a mirror through an offset column");
        assert_eq!(
            geom.mirror_shift(),
            n / 2 - 1,
            "width-n/2 blocks mirror across the column at shift n/2 - 1"
        );
    }

    #[test]
    fn lone_off_axis_pixel_still_has_a_mirror() {
        // A single phase-1 pixel at row 1 is symmetric across the column at
        // shift 2 (the pixel maps to itself), so it must be accepted.
        let n = 4;
        let mut chi = vec![0u8; n * n];
        chi[n] = 1;
        let geom = GridGeometry::from_chi(n, chi).expect("single pixel has a mirror");
        assert_eq!(geom.mirror_shift(), 2);
    }

    #[test]
    fn asymmetric_geometry_reports_first_defect() {
        // Pixels at (1, 0) and (2, 1): no shift maps the set to itself.
        let n = 4;
        let mut chi = vec![0u8; n * n];
        chi[n] = 1;
        chi[2 * n + 1] = 1;
        match GridGeometry::from_chi(n, chi) {
            Err(GeometryError::ReflectionSymmetryViolated(i, j)) => {
                assert_eq!((i, j), (1, 0), "first lexicographic defect of the canonical mirror");
            }
            other => panic!("expected symmetry violation, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_and_malformed_inputs_are_rejected() {
        assert!(matches!(
            GridGeometry::from_chi(4, vec![0u8; 16]),
            Err(GeometryError::DegeneratePhase(1))
        ));
        assert!(matches!(
            GridGeometry::from_chi(4, vec![1u8; 16]),
            Err(GeometryError::DegeneratePhase(2))
        ));
        assert!(matches!(
            GridGeometry::from_chi(5, vec![0u8; 25]),
            Err(GeometryError::BadSize(5))
        ));
        assert!(matches!(
            GridGeometry::from_chi(4, vec![0u8; 7]),
            Err(GeometryError::BadIndicator(_))
        ));
        let mut with_two = vec![0u8; 16];
        with_two[3] = 2;
        assert!(matches!(
            GridGeometry::from_chi(4, with_two),
            Err(GeometryError::BadIndicator(_))
        ));
    }

    #[test]
    fn geometry_json_round_trips() {
        let geom = random_symmetric_geometry(8, 13);
        let json = geom.to_json_string();
        let back = GridGeometry::from_json_str(&json).expect("round trip must parse");
        assert_eq!(back.chi(), geom.chi());
        assert_eq!(back.n(), geom.n());
    }

    #[test]
    fn conductivity_application_matches_projection_decomposition() {
        // sigma(x) e = (s1 P1 + s1 P2 + s2 P3 + s2 P4) e for scalar phases.
        let geom = random_symmetric_geometry(8, 14);
        let f = random_field(8, 15);
        let s1 = c(2.0, 0.5);
        let s2 = c(0.5, -0.25);
        let direct = geom.apply_conductivity(&Tensor2::scalar(s1), &Tensor2::scalar(s2), &f);
        let mut assembled = geom.project_phase(PhaseProjector::P1, &f).scale(s1);
        assembled.add_assign(&geom.project_phase(PhaseProjector::P2, &f).scale(s1));
        assembled.add_assign(&geom.project_phase(PhaseProjector::P3, &f).scale(s2));
        assembled.add_assign(&geom.project_phase(PhaseProjector::P4, &f).scale(s2));
        assert!(field_dist(&direct, &assembled) < 1e-14);
    }
}
