//! Dense 2x2 complex tensors.
//!
//! Conductivities of individual phases, effective tensors, and the 2x2 blocks
//! of coupled-transport tensors are all small dense matrices over ℂ. This
//! module keeps them as a plain value type with the handful of operations the
//! rest of the crate needs (algebra, inverses, coercivity measures) plus the
//! human-friendly text form used on the command line: four comma-separated
//! complex entries in row-major order, e.g. `2,0,0,2` or `1+0.5j,0,0,3-1j`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure to parse a complex scalar or a 2x2 tensor literal.
#[derive(Debug, Error, PartialEq)]
pub enum TensorParseError {
    /// The text is not a complex number of the form `a`, `bj`, or `a+bj`.
    #[error("invalid complex literal {0:?} (expected forms: `1.5`, `-2j`, `1.5+0.25j`)")]
    BadComplex(String),
    /// A tensor literal did not contain exactly four comma-separated entries.
    #[error("expected 4 comma-separated entries in tensor literal, found {0}")]
    BadEntryCount(usize),
}

/// Parse a complex scalar written as `a`, `bj`, `a+bj`, or `a-bj`.
///
/// The imaginary unit is spelled `j` (or `i`); exponents (`1e-3`) are
/// understood in both parts. Whitespace around the literal is ignored.
pub fn parse_complex(text: &str) -> Result<Complex64, TensorParseError> {
    let s = text.trim();
    let bad = || TensorParseError::BadComplex(text.to_string());
    if s.is_empty() {
        return Err(bad());
    }
    // Split at the last '+'/'-' that is neither leading nor an exponent sign.
    let bytes = s.as_bytes();
    let mut split = None;
    for (idx, &b) in bytes.iter().enumerate().skip(1) {
        if (b == b'+' || b == b'-') && !matches!(bytes[idx - 1], b'e' | b'E') {
            split = Some(idx);
        }
    }
    let parse_real = |p: &str| p.parse::<f64>().map_err(|_| bad());
    let parse_imag = |p: &str| {
        let body = p
            .strip_suffix(['j', 'i'])
            .ok_or_else(bad)?;
        match body {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => parse_real(body),
        }
    };
    match split {
        Some(idx) => {
            let (re, im) = (&s[..idx], &s[idx..]);
            Ok(Complex64::new(parse_real(re)?, parse_imag(im)?))
        }
        None => {
            if s.ends_with(['j', 'i']) {
                Ok(Complex64::new(0.0, parse_imag(s)?))
            } else {
                Ok(Complex64::new(parse_real(s)?, 0.0))
            }
        }
    }
}

/// A 2x2 complex tensor, stored row-major.
///
/// Serialized as `{"re": [[..]], "im": [[..]]}` so that JSON output stays
/// readable and carries no complex-number convention of its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor2 {
    /// Entries `e[i][j]` = row `i`, column `j`.
    pub e: [[Complex64; 2]; 2],
}

/// Serialized form of [`Tensor2`]: separate real and imaginary 2x2 arrays.
#[derive(Serialize, Deserialize)]
struct Tensor2Parts {
    re: [[f64; 2]; 2],
    im: [[f64; 2]; 2],
}

impl Serialize for Tensor2 {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let parts = Tensor2Parts {
            re: [[self.e[0][0].re, self.e[0][1].re], [self.e[1][0].re, self.e[1][1].re]],
            im: [[self.e[0][0].im, self.e[0][1].im], [self.e[1][0].im, self.e[1][1].im]],
        };
        parts.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Tensor2 {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let p = Tensor2Parts::deserialize(de)?;
        let mut e = [[Complex64::default(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                e[i][j] = Complex64::new(p.re[i][j], p.im[i][j]);
            }
        }
        Ok(Tensor2 { e })
    }
}

impl Tensor2 {
    /// The zero tensor.
    pub const fn zero() -> Self {
        Tensor2 { e: [[Complex64::new(0.0, 0.0); 2]; 2] }
    }

    /// The identity tensor.
    pub fn identity() -> Self {
        Tensor2::diagonal(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0))
    }

    /// Build from row-major entries.
    pub fn new(a11: Complex64, a12: Complex64, a21: Complex64, a22: Complex64) -> Self {
        Tensor2 { e: [[a11, a12], [a21, a22]] }
    }

    /// `diag(a, d)`.
    pub fn diagonal(a: Complex64, d: Complex64) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Tensor2 { e: [[a, z], [z, d]] }
    }

    /// `s * I` for a complex scalar `s`.
    pub fn scalar(s: Complex64) -> Self {
        Tensor2::diagonal(s, s)
    }

    /// The pointwise 90-degree rotation `R = [[0, -1], [1, 0]]`.
    pub fn rotation90() -> Self {
        let (o, l) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
        Tensor2 { e: [[o, -l], [l, o]] }
    }

    /// Parse `a11,a12,a21,a22` with complex entries (see [`parse_complex`]).
    pub fn parse(text: &str) -> Result<Self, TensorParseError> {
        let parts: Vec<&str> = text.split(',').collect();
        if parts.len() != 4 {
            return Err(TensorParseError::BadEntryCount(parts.len()));
        }
        Ok(Tensor2::new(
            parse_complex(parts[0])?,
            parse_complex(parts[1])?,
            parse_complex(parts[2])?,
            parse_complex(parts[3])?,
        ))
    }

    /// Matrix sum.
    pub fn add(&self, other: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.e[i][j] = self.e[i][j] + other.e[i][j];
            }
        }
        out
    }

    /// Matrix difference `self - other`.
    pub fn sub(&self, other: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.e[i][j] = self.e[i][j] - other.e[i][j];
            }
        }
        out
    }

    /// Scalar multiple.
    pub fn scale(&self, s: Complex64) -> Tensor2 {
        let mut out = *self;
        for row in out.e.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.e[i][j] = self.e[i][0] * other.e[0][j] + self.e[i][1] * other.e[1][j];
            }
        }
        out
    }

    /// Apply to a 2-vector.
    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.e[0][0] * v[0] + self.e[0][1] * v[1],
            self.e[1][0] * v[0] + self.e[1][1] * v[1],
        ]
    }

    /// Transpose.
    pub fn transpose(&self) -> Tensor2 {
        Tensor2::new(self.e[0][0], self.e[1][0], self.e[0][1], self.e[1][1])
    }

    /// Determinant.
    pub fn det(&self) -> Complex64 {
        self.e[0][0] * self.e[1][1] - self.e[0][1] * self.e[1][0]
    }

    /// Trace.
    pub fn trace(&self) -> Complex64 {
        self.e[0][0] + self.e[1][1]
    }

    /// Matrix inverse; `None` when the determinant underflows relative to the
    /// entry scale (relative threshold 1e-14).
    pub fn inverse(&self) -> Option<Tensor2> {
        let det = self.det();
        let scale = self.max_abs();
        if det.norm() <= 1e-14 * scale * scale {
            return None;
        }
        Some(Tensor2::new(self.e[1][1], -self.e[0][1], -self.e[1][0], self.e[0][0]).scale(det.inv()))
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.e
            .iter()
            .flatten()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.e
            .iter()
            .flatten()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest eigenvalue of the Hermitian part `(A + A^H)/2`.
    ///
    /// Positive iff the tensor is coercive: `Re (v^H A v) > 0` for all v != 0.
    pub fn hermitian_min_eig(&self) -> f64 {
        let a = self.e[0][0].re;
        let d = self.e[1][1].re;
        let b = (self.e[0][1] + self.e[1][0].conj()) * 0.5;
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        mid - rad
    }

    /// Largest singular value.
    pub fn max_singular_value(&self) -> f64 {
        // Singular values are the square roots of the eigenvalues of A^H A.
        let g11 = self.e[0][0].norm_sqr() + self.e[1][0].norm_sqr();
        let g22 = self.e[0][1].norm_sqr() + self.e[1][1].norm_sqr();
        let g12 = self.e[0][0].conj() * self.e[0][1] + self.e[1][0].conj() * self.e[1][1];
        let mid = 0.5 * (g11 + g22);
        let rad = (0.25 * (g11 - g22) * (g11 - g22) + g12.norm_sqr()).sqrt();
        (mid + rad).max(0.0).sqrt()
    }
}
