//! Matrix and fourth-order elasticity tensor algebra.
//!
//! A [`Tensor4`] with minor and major symmetry is stored as a symmetric 6×6
//! matrix acting on coordinates in an orthonormal basis of the symmetric
//! matrices (Mandel ordering 11, 22, 33, 23, 13, 12). Because the basis is
//! orthonormal, eigenvalues of the stored matrix are eigenvalues of the
//! quadratic form `Cξ·ξ` restricted to symmetric `ξ`.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;

/// Absolute tolerance on symmetry defects of unit-normalized tensors.
pub const SYMMETRY_TOL: f64 = 1e-12;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Index pairs of the Mandel basis.
pub const MANDEL_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

pub fn sym(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

pub fn skew(m: &Mat3) -> Mat3 {
    (m - m.transpose()) * 0.5
}

/// Frobenius inner product `ξ·η`.
pub fn dot(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

/// Coordinates of `sym(ξ)` in the orthonormal Mandel basis. The skew part of
/// `ξ` is annihilated exactly.
pub fn to_mandel(m: &Mat3) -> Vector6<f64> {
    Vector6::new(
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        (m[(1, 2)] + m[(2, 1)]) / SQRT2,
        (m[(0, 2)] + m[(2, 0)]) / SQRT2,
        (m[(0, 1)] + m[(1, 0)]) / SQRT2,
    )
}

pub fn from_mandel(v: &Vector6<f64>) -> Mat3 {
    let s23 = v[3] / SQRT2;
    let s13 = v[4] / SQRT2;
    let s12 = v[5] / SQRT2;
    Mat3::new(v[0], s12, s13, s12, v[1], s23, s13, s23, v[2])
}

/// The `p`-th orthonormal basis element of the symmetric matrices.
pub fn mandel_basis(p: usize) -> Mat3 {
    let mut e = Vector6::zeros();
    e[p] = 1.0;
    from_mandel(&e)
}

/// Fourth-order tensor with the symmetries `a_ij^hk = a_ji^hk = a_hk^ij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4 {
    mandel: Matrix6<f64>,
}

impl Tensor4 {
    pub fn zero() -> Self {
        Self {
            mandel: Matrix6::zeros(),
        }
    }

    /// Wraps a 6×6 Mandel matrix without checking symmetry. Use
    /// [`check_ellipticity`] or [`Tensor4::symmetry_defect`] to validate
    /// matrices that come from outside the constructors.
    pub fn from_mandel(m: Matrix6<f64>) -> Self {
        Self { mandel: m }
    }

    /// Isotropic tensor `Cξ = λ tr(ξ) I + μ (ξ + ξᵀ)`.
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        let mut m = Matrix6::identity() * (2.0 * mu);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += lambda;
            }
        }
        Self { mandel: m }
    }

    /// Builds a tensor from the 21 upper-triangle entries (row-major) of the
    /// engineering Voigt stiffness matrix, index order 11, 22, 33, 23, 13, 12.
    pub fn from_voigt_upper(c: &[f64]) -> Result<Self> {
        if c.len() != 21 {
            return Err(Error::Config(format!(
                "voigt stiffness needs 21 upper-triangle entries, got {}",
                c.len()
            )));
        }
        let w = |i: usize| if i < 3 { 1.0 } else { SQRT2 };
        let mut m = Matrix6::zeros();
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                let v = c[k] * w(i) * w(j);
                m[(i, j)] = v;
                m[(j, i)] = v;
                k += 1;
            }
        }
        Ok(Self { mandel: m })
    }

    /// The 21 upper-triangle engineering Voigt coefficients.
    pub fn to_voigt_upper(&self) -> Vec<f64> {
        let w = |i: usize| if i < 3 { 1.0 } else { SQRT2 };
        let mut out = Vec::with_capacity(21);
        for i in 0..6 {
            for j in i..6 {
                out.push(self.mandel[(i, j)] / (w(i) * w(j)));
            }
        }
        out
    }

    /// Builds a tensor from its 81 components `a[i][j][h][k] = a_ij^hk`,
    /// rejecting data that violates minor or major symmetry.
    pub fn from_components(a: &[[[[f64; 3]; 3]; 3]; 3]) -> Result<Self> {
        let scale = a
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut defect = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                for h in 0..3 {
                    for k in 0..3 {
                        let v = a[i][j][h][k];
                        defect = defect
                            .max((v - a[j][i][h][k]).abs())
                            .max((v - a[i][j][k][h]).abs())
                            .max((v - a[h][k][i][j]).abs());
                    }
                }
            }
        }
        if defect / scale > SYMMETRY_TOL {
            return Err(Error::SymmetryViolation {
                defect: defect / scale,
            });
        }
        let mut m = Matrix6::zeros();
        for p in 0..6 {
            let ep = mandel_basis(p);
            for q in 0..6 {
                let eq = mandel_basis(q);
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        for h in 0..3 {
                            for k in 0..3 {
                                s += a[i][j][h][k] * eq[(h, k)] * ep[(i, j)];
                            }
                        }
                    }
                }
                m[(p, q)] = s;
            }
        }
        Ok(Self { mandel: m })
    }

    /// Full component array `a_ij^hk`.
    pub fn components(&self) -> [[[[f64; 3]; 3]; 3]; 3] {
        let mut a = [[[[0.0; 3]; 3]; 3]; 3];
        let basis: Vec<Mat3> = (0..6).map(mandel_basis).collect();
        for (p, ep) in basis.iter().enumerate() {
            for (q, eq) in basis.iter().enumerate() {
                let mpq = self.mandel[(p, q)];
                if mpq == 0.0 {
                    continue;
                }
                for i in 0..3 {
                    for j in 0..3 {
                        for h in 0..3 {
                            for k in 0..3 {
                                a[i][j][h][k] += mpq * ep[(i, j)] * eq[(h, k)];
                            }
                        }
                    }
                }
            }
        }
        a
    }

    pub fn mandel(&self) -> &Matrix6<f64> {
        &self.mandel
    }

    /// `Cξ`, always a symmetric matrix.
    pub fn apply(&self, xi: &Mat3) -> Mat3 {
        from_mandel(&(self.mandel * to_mandel(xi)))
    }

    /// `Cξ·η`.
    pub fn energy(&self, xi: &Mat3, eta: &Mat3) -> f64 {
        to_mandel(eta).dot(&(self.mandel * to_mandel(xi)))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            mandel: self.mandel * s,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            mandel: self.mandel + other.mandel,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            mandel: self.mandel - other.mandel,
        }
    }

    /// Inverse as a map on the symmetric matrices.
    pub fn inverse_on_sym(&self) -> Option<Self> {
        self.mandel.try_inverse().map(|m| Self { mandel: m })
    }

    /// Largest of the major-symmetry defects of the stored form, relative to
    /// the largest entry. Minor symmetry holds by construction of the storage.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.mandel.amax().max(f64::MIN_POSITIVE);
        (self.mandel - self.mandel.transpose()).amax() / scale
    }

    /// Frobenius norm over all 81 components.
    pub fn norm(&self) -> f64 {
        self.mandel.norm()
    }

    pub fn symmetrized(&self) -> Self {
        Self {
            mandel: (self.mandel + self.mandel.transpose()) * 0.5,
        }
    }
}

/// Outcome of an ellipticity test against the two-sided bound
/// `c0‖ξ+ξᵀ‖² ≤ Cξ·ξ ≤ c1‖ξ+ξᵀ‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub passes: bool,
    /// Smallest eigenvalue of `C` relative to `‖ξ+ξᵀ‖²`.
    pub min_relative: f64,
    /// Largest eigenvalue of `C` relative to `‖ξ+ξᵀ‖²`.
    pub max_relative: f64,
}

/// Relative eigenvalues of `C` with respect to `‖ξ+ξᵀ‖² = 4‖sym ξ‖²`, sorted
/// ascending.
pub fn relative_eigenvalues(c: &Tensor4) -> [f64; 6] {
    let eig = SymmetricEigen::new((c.mandel + c.mandel.transpose()) * 0.5);
    let mut ev: [f64; 6] = std::array::from_fn(|i| eig.eigenvalues[i] / 4.0);
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Checks `C ∈ 𝓔(c0, c1)` pointwise. Bounds are compared with a relative
/// slack of `1e-12` so that exactly attained constants pass.
pub fn check_ellipticity(c: &Tensor4, c0: f64, c1: f64) -> Result<EllipticityReport> {
    let defect = c.symmetry_defect();
    if defect > SYMMETRY_TOL {
        return Err(Error::SymmetryViolation { defect });
    }
    let ev = relative_eigenvalues(c);
    let (lo, hi) = (ev[0], ev[5]);
    let slack = 1e-12 * hi.abs().max(c1.abs()).max(f64::MIN_POSITIVE);
    Ok(EllipticityReport {
        passes: lo >= c0 - slack && hi <= c1 + slack && lo > 0.0,
        min_relative: lo,
        max_relative: hi,
    })
}
