//! Gauss-point matrix fields and nodal displacement fields.

use std::sync::OnceLock;

use crate::mesh::{HexMesh, GAUSS_PER_ELEMENT};
use crate::tensor::{dot, skew, Mat3};

/// Integrability exponents used by the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exponent {
    ThreeHalves,
    Two,
    Three,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::ThreeHalves => 1.5,
            Exponent::Two => 2.0,
            Exponent::Three => 3.0,
        }
    }

    fn slot(self) -> usize {
        match self {
            Exponent::ThreeHalves => 0,
            Exponent::Two => 1,
            Exponent::Three => 2,
        }
    }
}

/// Matrix field sampled at the Gauss points of a mesh (eight per element,
/// element-major). Every sample carries the same quadrature weight.
#[derive(Debug)]
pub struct TensorField {
    values: Vec<Mat3>,
    weight: f64,
    norms: [OnceLock<f64>; 3],
}

impl Clone for TensorField {
    fn clone(&self) -> Self {
        Self::from_values(self.values.clone(), self.weight)
    }
}

impl PartialEq for TensorField {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.values == other.values
    }
}

impl TensorField {
    pub fn zeros(mesh: &HexMesh) -> Self {
        Self::from_values(vec![Mat3::zeros(); mesh.n_gauss()], mesh.gauss_weight())
    }

    pub fn from_values(values: Vec<Mat3>, weight: f64) -> Self {
        Self {
            values,
            weight,
            norms: Default::default(),
        }
    }

    /// Samples `f` at every Gauss point of `mesh`.
    pub fn from_fn(mesh: &HexMesh, f: impl Fn([f64; 3]) -> Mat3) -> Self {
        let values = (0..mesh.n_elements())
            .flat_map(|e| (0..GAUSS_PER_ELEMENT).map(move |g| (e, g)))
            .map(|(e, g)| f(mesh.gauss_point(e, g)))
            .collect();
        Self::from_values(values, mesh.gauss_weight())
    }

    pub fn constant(mesh: &HexMesh, m: Mat3) -> Self {
        Self::from_values(vec![m; mesh.n_gauss()], mesh.gauss_weight())
    }

    pub fn values(&self) -> &[Mat3] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn map(&self, f: impl Fn(&Mat3) -> Mat3) -> Self {
        Self::from_values(self.values.iter().map(f).collect(), self.weight)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(&Mat3, &Mat3) -> Mat3) -> Self {
        assert_eq!(self.len(), other.len(), "field length mismatch");
        Self::from_values(
            self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect(),
            self.weight,
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|a| a * s)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// `∫ f dx`.
    pub fn integral(&self) -> Mat3 {
        self.values.iter().fold(Mat3::zeros(), |acc, m| acc + m) * self.weight
    }

    pub fn measure(&self) -> f64 {
        self.weight * self.values.len() as f64
    }

    /// `(1/|Ω|) ∫ (f − fᵀ)/2 dx`.
    pub fn mean_skew(&self) -> Mat3 {
        skew(&self.integral()) / self.measure()
    }

    /// `∫ f·g dx`.
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "field length mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| dot(a, b)).sum::<f64>() * self.weight
    }

    /// `(∫ ‖f‖^p dx)^{1/p}` by the Gauss rule; cached per exponent.
    pub fn lp_norm(&self, p: Exponent) -> f64 {
        *self.norms[p.slot()].get_or_init(|| {
            let pv = p.value();
            let s: f64 = self.values.iter().map(|m| m.norm().powf(pv)).sum();
            (s * self.weight).powf(1.0 / pv)
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }

    /// Element averages of the field.
    pub fn element_means(&self) -> Vec<Mat3> {
        self.values
            .chunks(GAUSS_PER_ELEMENT)
            .map(|c| c.iter().fold(Mat3::zeros(), |a, m| a + m) / GAUSS_PER_ELEMENT as f64)
            .collect()
    }
}

/// `(∫ ‖f‖^p dx)^{1/p}`.
pub fn lp_norm(f: &TensorField, p: Exponent) -> f64 {
    f.lp_norm(p)
}

/// Nodal displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    values: Vec<[f64; 3]>,
}

impl VectorField {
    pub fn zeros(mesh: &HexMesh) -> Self {
        Self {
            values: vec![[0.0; 3]; mesh.n_nodes()],
        }
    }

    pub fn from_values(values: Vec<[f64; 3]>) -> Self {
        Self { values }
    }

    /// Nodal interpolant of `f`. Not meaningful on periodic meshes.
    pub fn interpolate(mesh: &HexMesh, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        Self {
            values: (0..mesh.n_nodes()).map(|n| f(mesh.node_position(n))).collect(),
        }
    }

    pub(crate) fn from_dofs(dofs: &[f64]) -> Self {
        Self {
            values: dofs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|a| [a[0] * s, a[1] * s, a[2] * s]).collect(),
        }
    }

    /// Displacement gradient `(Du)_ij = ∂u_i/∂x_j` at the Gauss points.
    pub fn gradient(&self, mesh: &HexMesh) -> TensorField {
        let r = mesh.reference();
        let mut out = Vec::with_capacity(mesh.n_gauss());
        for e in 0..mesh.n_elements() {
            let nodes = mesh.element_nodes(e);
            for g in 0..GAUSS_PER_ELEMENT {
                let mut m = Mat3::zeros();
                for (a, &n) in nodes.iter().enumerate() {
                    let u = self.values[n];
                    let gr = r.grad[g][a];
                    for i in 0..3 {
                        for j in 0..3 {
                            m[(i, j)] += u[i] * gr[j];
                        }
                    }
                }
                out.push(m);
            }
        }
        TensorField::from_values(out, mesh.gauss_weight())
    }

    /// Values at the Gauss points.
    pub fn at_gauss(&self, mesh: &HexMesh) -> Vec<[f64; 3]> {
        let r = mesh.reference();
        let mut out = Vec::with_capacity(mesh.n_gauss());
        for e in 0..mesh.n_elements() {
            let nodes = mesh.element_nodes(e);
            for g in 0..GAUSS_PER_ELEMENT {
                let mut v = [0.0; 3];
                for (a, &n) in nodes.iter().enumerate() {
                    for (i, vi) in v.iter_mut().enumerate() {
                        *vi += r.shape[g][a] * self.values[n][i];
                    }
                }
                out.push(v);
            }
        }
        out
    }

    /// `∫ u dx`.
    pub fn integral(&self, mesh: &HexMesh) -> [f64; 3] {
        let w = mesh.gauss_weight();
        self.at_gauss(mesh).iter().fold([0.0; 3], |acc, v| {
            [acc[0] + v[0] * w, acc[1] + v[1] * w, acc[2] + v[2] * w]
        })
    }

    /// `(‖u‖_p^p + ‖Du‖_p^p)^{1/p}`.
    pub fn w1p_norm(&self, mesh: &HexMesh, p: Exponent) -> f64 {
        let pv = p.value();
        let w = mesh.gauss_weight();
        let lp: f64 = self
            .at_gauss(mesh)
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().powf(pv))
            .sum::<f64>()
            * w;
        let du = self.gradient(mesh).lp_norm(p).powf(pv);
        (lp + du).powf(1.0 / pv)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
