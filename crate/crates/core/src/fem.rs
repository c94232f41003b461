//! Trilinear finite elements for the traction-free problem
//! `−div(C Du) = div F`, `C Du·n = −F·n`, posed on the quotient by rigid
//! motions, and for periodic cell problems.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{TensorField, VectorField};
use crate::material::ElasticTensorField;
use crate::mesh::{HexMesh, GAUSS_PER_ELEMENT, NODES_PER_ELEMENT};
use crate::tensor::{skew, Mat3, Tensor4};

const EDOF: usize = 3 * NODES_PER_ELEMENT;
type ElementMatrix = [f64; EDOF * EDOF];

/// Tolerance on the skew mean of a forcing accepted by the solver.
pub const ADMISSIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Stopping threshold on `‖r‖ / ‖b‖`.
    pub rtol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Recursive residual relative to the right-hand side.
    pub relative_residual: f64,
    /// `‖b − Ax‖ / ‖b‖` recomputed after the last iteration.
    pub true_residual: f64,
}

/// `Q[j][l][a][b] = ∫_element ∂_j N_a ∂_l N_b`.
fn gradient_products(mesh: &HexMesh) -> Box<[[[[f64; 8]; 8]; 3]; 3]> {
    let r = mesh.reference();
    let mut q = Box::new([[[[0.0; 8]; 8]; 3]; 3]);
    for g in 0..GAUSS_PER_ELEMENT {
        for j in 0..3 {
            for l in 0..3 {
                for a in 0..8 {
                    for b in 0..8 {
                        q[j][l][a][b] += r.weight * r.grad[g][a][j] * r.grad[g][b][l];
                    }
                }
            }
        }
    }
    q
}

fn element_matrix(c: &Tensor4, q: &[[[[f64; 8]; 8]; 3]; 3]) -> ElementMatrix {
    let a4 = c.components();
    let mut k = [0.0; EDOF * EDOF];
    for a in 0..8 {
        for i in 0..3 {
            for b in 0..8 {
                for kk in 0..3 {
                    let mut s = 0.0;
                    for j in 0..3 {
                        for l in 0..3 {
                            s += a4[i][j][kk][l] * q[j][l][a][b];
                        }
                    }
                    k[(3 * a + i) * EDOF + 3 * b + kk] = s;
                }
            }
        }
    }
    k
}

/// Matrix-free stiffness operator `x·Ay = ∫ C Dx·Dy`.
#[derive(Debug, Clone)]
pub struct ElasticOperator {
    mesh: HexMesh,
    ids: Vec<u32>,
    matrices: Vec<ElementMatrix>,
    elem_nodes: Vec<[u32; 8]>,
    node_offsets: Vec<usize>,
    node_pairs: Vec<(u32, u8)>,
    diag: Vec<f64>,
}

impl ElasticOperator {
    pub fn new(mesh: &HexMesh, c: &ElasticTensorField) -> Result<Self> {
        c.check_mesh(mesh)?;
        let q = gradient_products(mesh);
        let matrices: Vec<ElementMatrix> = c.palette().iter().map(|t| element_matrix(t, &q)).collect();
        let elem_nodes: Vec<[u32; 8]> = (0..mesh.n_elements())
            .map(|e| mesh.element_nodes(e).map(|n| n as u32))
            .collect();
        let inc = mesh.incidence();
        let mut node_offsets = Vec::with_capacity(mesh.n_nodes() + 1);
        let mut node_pairs = Vec::with_capacity(8 * mesh.n_elements());
        node_offsets.push(0);
        for n in 0..mesh.n_nodes() {
            node_pairs.extend_from_slice(inc.of(n));
            node_offsets.push(node_pairs.len());
        }
        let mut diag = vec![0.0; 3 * mesh.n_nodes()];
        for (e, nodes) in elem_nodes.iter().enumerate() {
            let k = &matrices[c.ids()[e] as usize];
            for (a, &n) in nodes.iter().enumerate() {
                for i in 0..3 {
                    let r = 3 * a + i;
                    diag[3 * n as usize + i] += k[r * EDOF + r];
                }
            }
        }
        Ok(Self {
            mesh: mesh.clone(),
            ids: c.ids().to_vec(),
            matrices,
            elem_nodes,
            node_offsets,
            node_pairs,
            diag,
        })
    }

    pub fn mesh(&self) -> &HexMesh {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `y = A x`, gathered per node so the result is independent of the
    /// thread count.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        const CHUNK: usize = 256;
        y.par_chunks_mut(3 * CHUNK).enumerate().for_each(|(ci, out)| {
            for (local, yn) in out.chunks_exact_mut(3).enumerate() {
                let n = ci * CHUNK + local;
                let mut acc = [0.0; 3];
                for &(e, a) in &self.node_pairs[self.node_offsets[n]..self.node_offsets[n + 1]] {
                    let k = &self.matrices[self.ids[e as usize] as usize];
                    let nodes = &self.elem_nodes[e as usize];
                    for (i, acc_i) in acc.iter_mut().enumerate() {
                        let row = &k[(3 * a as usize + i) * EDOF..][..EDOF];
                        let mut s = 0.0;
                        for (b, &m) in nodes.iter().enumerate() {
                            let xm = &x[3 * m as usize..3 * m as usize + 3];
                            s += row[3 * b] * xm[0] + row[3 * b + 1] * xm[1] + row[3 * b + 2] * xm[2];
                        }
                        *acc_i += s;
                    }
                }
                yn.copy_from_slice(&acc);
            }
        });
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        y
    }

    /// `x·Ay`.
    pub fn energy(&self, x: &[f64], y: &[f64]) -> f64 {
        dotv(x, &self.apply_vec(y))
    }

    /// Load vector `b_{A,i} = ∫ F·D(φ_A e_i)`.
    pub fn load(&self, f: &TensorField) -> Vec<f64> {
        load_vector(&self.mesh, f)
    }
}

pub(crate) fn load_vector(mesh: &HexMesh, f: &TensorField) -> Vec<f64> {
    assert_eq!(f.len(), mesh.n_gauss(), "forcing does not live on this mesh");
    let r = mesh.reference();
    let mut b = vec![0.0; 3 * mesh.n_nodes()];
    let w = r.weight;
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        let vals = &f.values()[e * GAUSS_PER_ELEMENT..(e + 1) * GAUSS_PER_ELEMENT];
        for (a, &n) in nodes.iter().enumerate() {
            for i in 0..3 {
                let mut s = 0.0;
                for (g, m) in vals.iter().enumerate() {
                    let gr = r.grad[g][a];
                    s += m[(i, 0)] * gr[0] + m[(i, 1)] * gr[1] + m[(i, 2)] * gr[2];
                }
                b[3 * n + i] += w * s;
            }
        }
    }
    b
}

pub(crate) fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dotv(a, a).sqrt()
}

/// Discrete rigid motions `ξx + b`, `ξ` skew (translations only on periodic
/// meshes), as nodal dof vectors.
#[derive(Debug, Clone)]
pub struct RigidMotionBasis {
    modes: Vec<Vec<f64>>,
    orthonormal: Vec<Vec<f64>>,
}

impl RigidMotionBasis {
    pub fn new(mesh: &HexMesh) -> Self {
        let n = mesh.n_nodes();
        let mut modes = Vec::new();
        for k in 0..3 {
            let mut v = vec![0.0; 3 * n];
            for node in 0..n {
                v[3 * node + k] = 1.0;
            }
            modes.push(v);
        }
        if !mesh.is_periodic() {
            let o = mesh.origin();
            let s = mesh.size();
            let center: [f64; 3] = std::array::from_fn(|d| o[d] + 0.5 * s[d]);
            for (i, j) in [(1, 2), (0, 2), (0, 1)] {
                let mut v = vec![0.0; 3 * n];
                for node in 0..n {
                    let x = mesh.node_position(node);
                    v[3 * node + i] = x[j] - center[j];
                    v[3 * node + j] = -(x[i] - center[i]);
                }
                modes.push(v);
            }
        }
        let mut orthonormal: Vec<Vec<f64>> = Vec::new();
        for m in &modes {
            let mut v = m.clone();
            for _ in 0..2 {
                for q in &orthonormal {
                    let c = dotv(&v, q);
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            let nv = norm(&v);
            v.iter_mut().for_each(|a| *a /= nv);
            orthonormal.push(v);
        }
        Self { modes, orthonormal }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    /// Gram matrix of the raw modes in the Euclidean dof inner product.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.modes.len();
        DMatrix::from_fn(k, k, |i, j| dotv(&self.modes[i], &self.modes[j]))
    }

    /// Euclidean projection onto the orthogonal complement of the modes.
    pub fn project_out(&self, v: &mut [f64]) {
        for q in &self.orthonormal {
            let c = dotv(v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    }
}

/// Subtracts the rigid motion that puts `u` in `𝓡⊥`: `∫u = 0` and
/// `skew ∫Du = 0`. On periodic meshes only the mean is removed.
pub fn project_rigid(u: &VectorField, mesh: &HexMesh) -> VectorField {
    let vol = mesh.volume();
    let m = u.integral(mesh).map(|v| v / vol);
    let w = if mesh.is_periodic() {
        Mat3::zeros()
    } else {
        skew(&u.gradient(mesh).integral()) / vol
    };
    let o = mesh.origin();
    let s = mesh.size();
    let center: [f64; 3] = std::array::from_fn(|d| o[d] + 0.5 * s[d]);
    let values = u
        .values()
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let x = mesh.node_position(n);
            let r: [f64; 3] = std::array::from_fn(|d| x[d] - center[d]);
            std::array::from_fn(|i| v[i] - m[i] - (w[(i, 0)] * r[0] + w[(i, 1)] * r[1] + w[(i, 2)] * r[2]))
        })
        .collect();
    VectorField::from_values(values)
}

/// A forcing with skew-free mean, and the correction that was removed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleForcing {
    field: TensorField,
    correction: Mat3,
}

impl AdmissibleForcing {
    pub fn field(&self) -> &TensorField {
        &self.field
    }

    /// The subtracted mean skew part `H̄ᵃ`.
    pub fn correction(&self) -> Mat3 {
        self.correction
    }

    pub fn correction_norm(&self) -> f64 {
        self.correction.norm()
    }

    pub fn into_field(self) -> TensorField {
        self.field
    }

    /// Wraps `f` after checking its skew mean against
    /// [`ADMISSIBILITY_TOL`] relative to its mean size.
    pub fn try_new(f: TensorField) -> Result<Self> {
        let defect = f.mean_skew().norm();
        let scale = f.integral().norm() / f.measure() + f.max_abs();
        if defect > ADMISSIBILITY_TOL * scale.max(1.0) {
            return Err(Error::NotAdmissible { defect });
        }
        Ok(Self {
            field: f,
            correction: Mat3::zeros(),
        })
    }
}

/// `H ↦ H − H̄ᵃ` with `H̄ᵃ = (1/|Ω|) ∫ (H − Hᵀ)/2`.
pub fn project_admissible(h: &TensorField) -> AdmissibleForcing {
    let k = h.mean_skew();
    AdmissibleForcing {
        field: h.map(|m| m - k),
        correction: k,
    }
}

/// Jacobi-preconditioned conjugate gradients on the complement of the
/// rigid modes, which are projected out of every search direction.
pub fn pcg(
    op: &ElasticOperator,
    rigid: &RigidMotionBasis,
    b: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut r = b.to_vec();
    rigid.project_out(&mut r);
    let bnorm = norm(&r);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
                true_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let precondition = |r: &[f64]| {
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        rigid.project_out(&mut z);
        z
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dotv(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < opts.max_iterations {
        op.apply(&p, &mut ap);
        let pap = dotv(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(a, b)| *a += alpha * b);
        r.iter_mut().zip(&ap).for_each(|(a, b)| *a -= alpha * b);
        iterations += 1;
        rel = norm(&r) / bnorm;
        if rel <= opts.rtol {
            break;
        }
        z = precondition(&r);
        let rz_new = dotv(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(a, b)| *a = b + beta * *a);
    }
    rigid.project_out(&mut x);
    let mut res = b.to_vec();
    rigid.project_out(&mut res);
    let ax = op.apply_vec(&x);
    res.iter_mut().zip(&ax).for_each(|(a, b)| *a -= b);
    let true_residual = norm(&res) / bnorm;
    log::debug!("pcg: {iterations} iterations, residual {rel:e} (true {true_residual:e})");
    if rel > opts.rtol {
        return Err(Error::NoConvergence {
            iterations,
            residual: rel,
        });
    }
    Ok((
        x,
        SolveStats {
            iterations,
            relative_residual: rel,
            true_residual,
        },
    ))
}

/// Reusable solver for one mesh and tensor field.
#[derive(Debug, Clone)]
pub struct NeumannSolver {
    op: ElasticOperator,
    rigid: RigidMotionBasis,
    opts: SolverOptions,
}

impl NeumannSolver {
    /// Fails unless `C` is symmetric and strictly elliptic.
    pub fn new(mesh: &HexMesh, c: &ElasticTensorField, opts: SolverOptions) -> Result<Self> {
        c.require_elliptic()?;
        Ok(Self {
            op: ElasticOperator::new(mesh, c)?,
            rigid: RigidMotionBasis::new(mesh),
            opts,
        })
    }

    pub fn mesh(&self) -> &HexMesh {
        self.op.mesh()
    }

    pub fn operator(&self) -> &ElasticOperator {
        &self.op
    }

    pub fn rigid_basis(&self) -> &RigidMotionBasis {
        &self.rigid
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    /// `u ∈ 𝓡⊥` with `∫ C Du·Dφ = −∫ F·Dφ` for every discrete `φ`.
    pub fn solve(&self, f: &AdmissibleForcing) -> Result<(VectorField, SolveStats)> {
        let mut b = self.op.load(f.field());
        b.iter_mut().for_each(|v| *v = -*v);
        self.solve_load(&b)
    }

    /// Solves `A u = b` for a raw load vector and returns the gauge-fixed
    /// displacement.
    pub fn solve_load(&self, b: &[f64]) -> Result<(VectorField, SolveStats)> {
        let (x, stats) = pcg(&self.op, &self.rigid, b, &self.opts)?;
        let u = project_rigid(&VectorField::from_dofs(&x), self.mesh());
        Ok((u, stats))
    }
}

/// One-shot traction-free solve.
pub fn solve_neumann(
    c: &ElasticTensorField,
    f: &AdmissibleForcing,
    mesh: &HexMesh,
    opts: &SolverOptions,
) -> Result<(VectorField, SolveStats)> {
    NeumannSolver::new(mesh, c, *opts)?.solve(f)
}

/// Gram operator of the discrete `H¹` inner product `∫ u·v + Du·Dv`.
struct H1Gram {
    mesh: HexMesh,
    local: [[f64; 8]; 8],
}

impl H1Gram {
    fn new(mesh: &HexMesh) -> Self {
        let r = mesh.reference();
        let mut local = [[0.0; 8]; 8];
        for g in 0..GAUSS_PER_ELEMENT {
            for a in 0..8 {
                for b in 0..8 {
                    let lap: f64 = (0..3).map(|d| r.grad[g][a][d] * r.grad[g][b][d]).sum();
                    local[a][b] += r.weight * (r.shape[g][a] * r.shape[g][b] + lap);
                }
            }
        }
        Self {
            mesh: mesh.clone(),
            local,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for e in 0..self.mesh.n_elements() {
            let nodes = self.mesh.element_nodes(e);
            for (a, &na) in nodes.iter().enumerate() {
                for (b, &nb) in nodes.iter().enumerate() {
                    let m = self.local[a][b];
                    for i in 0..3 {
                        y[3 * na + i] += m * x[3 * nb + i];
                    }
                }
            }
        }
        y
    }
}

/// Smallest eigenvalue estimate of `∫ C Du·Du` relative to `‖u‖²_{H¹}` on
/// the discrete `𝓡⊥`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KornEstimate {
    pub eigenvalue: f64,
    pub iterations: usize,
    /// Largest Rayleigh quotient over the rigid modes; vanishes up to
    /// round-off because they span the operator's null space.
    pub rigid_rayleigh: f64,
}

/// Inverse power iteration for `A x = λ M x` with iterates kept
/// `M`-orthogonal to the rigid modes.
pub fn korn_coercivity_check(c: &ElasticTensorField, mesh: &HexMesh) -> Result<KornEstimate> {
    let opts = SolverOptions {
        rtol: 1e-10,
        ..Default::default()
    };
    let solver = NeumannSolver::new(mesh, c, opts)?;
    let gram = H1Gram::new(mesh);
    let modes = solver.rigid.modes();
    let m_modes: Vec<Vec<f64>> = modes.iter().map(|r| gram.apply(r)).collect();
    let k = modes.len();
    let g = DMatrix::from_fn(k, k, |i, j| dotv(&modes[i], &m_modes[j]));
    let g_inv = g
        .try_inverse()
        .ok_or_else(|| Error::Config("degenerate rigid-mode basis".into()))?;
    let m_project = |x: &mut Vec<f64>| {
        let rhs = DVector::from_fn(k, |i, _| dotv(&m_modes[i], x));
        let coef = &g_inv * rhs;
        for (i, r) in modes.iter().enumerate() {
            x.iter_mut().zip(r).for_each(|(a, b)| *a -= coef[i] * b);
        }
    };

    let rigid_rayleigh = modes
        .iter()
        .zip(&m_modes)
        .map(|(r, mr)| solver.op.energy(r, r).abs() / dotv(r, mr))
        .fold(0.0, f64::max);

    let n = solver.op.n_dofs();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let node = mesh.node_position(i / 3);
            let c = i % 3;
            (1.3 * node[0] + 0.7 * node[1] * node[1] - 0.4 * node[2] + 0.1 * c as f64).sin()
        })
        .collect();
    m_project(&mut x);
    let mut lambda = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let mx = gram.apply(&x);
        let (z, _) = pcg(&solver.op, &solver.rigid, &mx, &opts)?;
        let mut z = z;
        m_project(&mut z);
        let mz = gram.apply(&z);
        let zmz = dotv(&z, &mz);
        let new = solver.op.energy(&z, &z) / zmz;
        let s = zmz.sqrt();
        x = z.into_iter().map(|v| v / s).collect();
        let done = (lambda - new).abs() <= 1e-8 * new.abs();
        lambda = new;
        if done {
            break;
        }
    }
    Ok(KornEstimate {
        eigenvalue: lambda,
        iterations,
        rigid_rayleigh,
    })
}
