//! Two-level density matrices and the state-comparison functionals.
//!
//! Basis ordering is `{|e>, |g>}`: index 0 is the excited state, index 1 the
//! ground state, and the lowering operator is `[[0, 0], [1, 0]]`. With this
//! ordering a Bloch vector `(x, y, z)` maps to `(1 + x sx + y sy + z sz) / 2`,
//! so `z = -1` is the ground state.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<Complex64>;
pub type Ket = Vector2<Complex64>;

const BLOCH_TOL: f64 = 1e-9;
const PURE_TOL: f64 = 1e-9;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity() -> Mat2 {
    Mat2::identity()
}

pub fn sigma_x() -> Mat2 {
    Mat2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

pub fn sigma_y() -> Mat2 {
    Mat2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0))
}

pub fn sigma_z() -> Mat2 {
    Mat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
}

/// Lowering operator: maps `|e>` (index 0) to `|g>` (index 1).
pub fn sigma_minus() -> Mat2 {
    Mat2::new(c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

#[inline]
pub(crate) fn trace(m: &Mat2) -> Complex64 {
    m[(0, 0)] + m[(1, 1)]
}

/// Eigenvalues `(min, max)` of the Hermitian part of a 2x2 matrix.
pub(crate) fn hermitian_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (mean - radius, mean + radius)
}

/// Cartesian Bloch-sphere coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// A qubit density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    matrix: Mat2,
}

impl QubitState {
    /// Wraps a matrix without validation. Callers inside the crate use this for
    /// matrices produced by trace-normalised completely positive maps.
    pub(crate) fn from_matrix_unchecked(matrix: Mat2) -> Self {
        Self { matrix }
    }

    /// Builds a state from an arbitrary matrix, checking Hermiticity, unit trace and
    /// positivity within the given tolerances.
    pub fn from_matrix(matrix: Mat2) -> Result<Self> {
        let herm = (matrix - matrix.adjoint())
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()));
        if herm > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "matrix is not Hermitian ({herm:e})"
            )));
        }
        let tr = trace(&matrix);
        if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
            return Err(Error::InvalidParams(format!("trace is {tr}, expected 1")));
        }
        let (min_eig, _) = hermitian_eigenvalues(&matrix);
        if min_eig < -BLOCH_TOL {
            return Err(Error::NotPositive(min_eig));
        }
        Ok(Self { matrix })
    }

    /// Normalised projector onto a (not necessarily normalised) ket.
    pub fn from_ket(psi: &Ket) -> Self {
        let n = psi.norm_squared();
        Self {
            matrix: (psi * psi.adjoint()).unscale(n),
        }
    }

    pub fn excited() -> Self {
        Self::from_bloch_unchecked(BlochVector::new(0.0, 0.0, 1.0))
    }

    pub fn ground() -> Self {
        Self::from_bloch_unchecked(BlochVector::new(0.0, 0.0, -1.0))
    }

    pub fn maximally_mixed() -> Self {
        Self::from_bloch_unchecked(BlochVector::new(0.0, 0.0, 0.0))
    }

    pub fn from_bloch(b: BlochVector) -> Result<Self> {
        let r = b.norm();
        if !r.is_finite() || r > 1.0 + BLOCH_TOL {
            return Err(Error::BlochOutOfRange(r));
        }
        Ok(Self::from_bloch_unchecked(b))
    }

    pub(crate) fn from_bloch_unchecked(b: BlochVector) -> Self {
        let matrix = Mat2::new(
            c(0.5 * (1.0 + b.z), 0.0),
            c(0.5 * b.x, -0.5 * b.y),
            c(0.5 * b.x, 0.5 * b.y),
            c(0.5 * (1.0 - b.z), 0.0),
        );
        Self { matrix }
    }

    pub fn bloch(&self) -> BlochVector {
        let m = &self.matrix;
        BlochVector {
            x: 2.0 * m[(1, 0)].re,
            y: 2.0 * m[(1, 0)].im,
            z: (m[(0, 0)] - m[(1, 1)]).re,
        }
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix).0
    }

    pub fn is_pure(&self) -> bool {
        purity(self) >= 1.0 - PURE_TOL
    }

    /// Mirror image under the reflection `x -> -x` of the Bloch sphere.
    pub fn mirrored(&self) -> Self {
        let b = self.bloch();
        Self::from_bloch_unchecked(BlochVector::new(-b.x, b.y, b.z))
    }
}

impl From<BlochVector> for QubitState {
    fn from(b: BlochVector) -> Self {
        QubitState::from_bloch_unchecked(b)
    }
}

/// Hilbert-Schmidt inner product `Tr[a b]` of two Hermitian matrices.
#[inline]
pub fn hs_inner(a: &Mat2, b: &Mat2) -> f64 {
    (a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(1, 0)] + a[(1, 0)] * b[(0, 1)] + a[(1, 1)] * b[(1, 1)])
        .re
}

/// `Tr[rho^2]`.
pub fn purity(rho: &QubitState) -> f64 {
    hs_inner(&rho.matrix, &rho.matrix)
}

/// Trace squared deviation `Tr[(rho - sigma)^2]`.
pub fn trsd(rho: &QubitState, sigma: &QubitState) -> f64 {
    let d = rho.matrix - sigma.matrix;
    hs_inner(&d, &d)
}

/// `Tr[rho sigma]`, the fidelity when at least one argument is pure.
///
/// When neither argument is pure the overlap is still returned but a warning is
/// logged, since it is then not the Jozsa fidelity.
pub fn fidelity(rho: &QubitState, sigma: &QubitState) -> f64 {
    let (value, both_mixed) = fidelity_checked(rho, sigma);
    if both_mixed {
        log::warn!("fidelity evaluated between two mixed states; returning Tr[rho sigma]");
    }
    value
}

/// Overlap `Tr[rho sigma]` together with a flag set when neither argument is pure.
pub fn fidelity_checked(rho: &QubitState, sigma: &QubitState) -> (f64, bool) {
    let value = hs_inner(&rho.matrix, &sigma.matrix);
    (value, !rho.is_pure() && !sigma.is_pure())
}
