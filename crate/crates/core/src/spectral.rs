//! Periodic curl inversion on the padded box.
//!
//! Each row `μ_i` of the grid measure is a face field. The potential solves
//! `−Δ_h ψ_i = μ_i` with the staggered seven-point Laplacian, and
//! `β_i = curl⁻ ψ_i` lands on edges: component `j` on edges parallel to
//! `e_j`, index `c` at `origin + h∘(c + ½ e_j)`. Because `μ_i` is
//! discretely divergence free, `curl⁺ β_i = μ_i` and `div⁻ β_i = 0` hold to
//! round-off.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dislocation::{GridMeasure, PaddedGrid};
use crate::error::{Error, Result};
use crate::field::{TensorField, VectorField};
use crate::mesh::{HexMesh, GAUSS_PER_ELEMENT};
use crate::tensor::Mat3;

/// Tolerance on component means accepted by [`solve_beta_mu`].
pub const MEAN_TOL: f64 = 1e-10;
/// Tolerance on the normalized divergence accepted by [`solve_beta_mu`].
pub const DIVERGENCE_TOL: f64 = 1e-8;

/// Three-dimensional complex FFT built from one-dimensional passes.
pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims,
            forward: dims.map(|n| planner.plan_fft_forward(n)),
            inverse: dims.map(|n| planner.plan_fft_inverse(n)),
        }
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nz] = self.dims;
        plans[0].process(data);
        let mut line = vec![Complex64::default(); ny.max(nz)];
        for k in 0..nz {
            for i in 0..nx {
                for j in 0..ny {
                    line[j] = data[i + nx * (j + ny * k)];
                }
                plans[1].process(&mut line[..ny]);
                for j in 0..ny {
                    data[i + nx * (j + ny * k)] = line[j];
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                for k in 0..nz {
                    line[k] = data[i + nx * (j + ny * k)];
                }
                plans[2].process(&mut line[..nz]);
                for k in 0..nz {
                    data[i + nx * (j + ny * k)] = line[k];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Normalized inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Matrix field on the edges of the padded grid; `data[3 i + j]` holds
/// `β_ij` on edges parallel to `e_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    grid: PaddedGrid,
    data: Vec<Vec<f64>>,
}

impl EdgeField {
    pub fn zeros(grid: &PaddedGrid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![vec![0.0; grid.len()]; 9],
        }
    }

    pub fn grid(&self) -> &PaddedGrid {
        &self.grid
    }

    pub fn component(&self, row: usize, col: usize) -> &[f64] {
        &self.data[3 * row + col]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
        }
    }

    /// Row-wise forward-difference curl, edges to faces.
    pub fn curl(&self) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let h = g.spacing;
        let mut out = vec![vec![0.0; g.len()]; 9];
        for n in 0..g.len() {
            let c = g.coords(n).map(|v| v as i64);
            for i in 0..3 {
                for a in 0..3 {
                    let (b, d) = ((a + 1) % 3, (a + 2) % 3);
                    let mut cb = c;
                    cb[b] += 1;
                    let mut cd = c;
                    cd[d] += 1;
                    let bd = &self.data[3 * i + d];
                    let bb = &self.data[3 * i + b];
                    out[3 * i + a][n] = (bd[g.index(cb)] - bd[n]) / h[b] - (bb[g.index(cd)] - bb[n]) / h[d];
                }
            }
        }
        out
    }

    /// Row-wise backward-difference divergence, edges to nodes.
    pub fn divergence(&self) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let mut out = vec![vec![0.0; g.len()]; 3];
        for n in 0..g.len() {
            let c = g.coords(n).map(|v| v as i64);
            for (i, row) in out.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..3 {
                    let mut dn = c;
                    dn[j] -= 1;
                    let comp = &self.data[3 * i + j];
                    s += (comp[n] - comp[g.index(dn)]) / g.spacing[j];
                }
                row[n] = s;
            }
        }
        out
    }

    /// `max |curl⁺β − μ| / max |μ|` over the whole box, or over faces
    /// inside the mesh box when `interior` is set.
    pub fn curl_residual(&self, mu: &GridMeasure, interior: bool) -> f64 {
        let scale = mu.max_abs();
        let curl = self.curl();
        let g = &self.grid;
        let mut worst = 0.0f64;
        for n in 0..g.len() {
            if interior && !self.face_inside(n) {
                continue;
            }
            for (k, comp) in curl.iter().enumerate() {
                worst = worst.max((comp[n] - mu.components()[k][n]).abs());
            }
        }
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }

    /// `max |div⁻β| · h / max |β|`.
    pub fn div_residual(&self) -> f64 {
        let scale = self.max_abs();
        let worst = self.divergence().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            worst
        } else {
            worst * self.grid.spacing.iter().copied().fold(f64::INFINITY, f64::min) / scale
        }
    }

    /// Conservative test: every face touching index `n` lies in the closed
    /// mesh box.
    fn face_inside(&self, n: usize) -> bool {
        let g = &self.grid;
        let c = g.coords(n);
        (0..3).all(|d| c[d] >= g.pad[d] && c[d] + 1 <= g.pad[d] + g.inner[d])
    }

    /// Adds the forward-difference gradient of a nodal field given on the
    /// whole padded grid.
    pub fn add_gradient(&self, w: &[[f64; 3]]) -> Self {
        let g = &self.grid;
        let mut out = self.clone();
        for n in 0..g.len() {
            let c = g.coords(n).map(|v| v as i64);
            for j in 0..3 {
                let mut up = c;
                up[j] += 1;
                let m = g.index(up);
                for i in 0..3 {
                    out.data[3 * i + j][n] += (w[m][i] - w[n][i]) / g.spacing[j];
                }
            }
        }
        out
    }

    /// Adds the edge differences of a nodal displacement on the embedded
    /// mesh; edges outside the mesh are left unchanged.
    pub fn add_mesh_gradient(&self, mesh: &HexMesh, u: &VectorField) -> Self {
        let g = &self.grid;
        let mut out = self.clone();
        let nd = mesh.node_dims();
        for node in 0..mesh.n_nodes() {
            let c = mesh.node_coords(node);
            for j in 0..3 {
                if c[j] + 1 >= nd[j] {
                    continue;
                }
                let mut up = c;
                up[j] += 1;
                let m = mesh.node_index(up);
                let e = g.index(std::array::from_fn(|d| (c[d] + g.pad[d]) as i64));
                for i in 0..3 {
                    out.data[3 * i + j][e] += (u.values()[m][i] - u.values()[node][i]) / g.spacing[j];
                }
            }
        }
        out
    }

    /// Trilinear interpolation of every component on its own staggered
    /// lattice, periodic in the box.
    pub fn sample(&self, x: [f64; 3]) -> Mat3 {
        let g = &self.grid;
        let mut m = Mat3::zeros();
        for j in 0..3 {
            let t: [f64; 3] = std::array::from_fn(|d| {
                let shift = if d == j { 0.5 } else { 0.0 };
                (x[d] - g.origin[d]) / g.spacing[d] - shift
            });
            let base = t.map(|v| v.floor());
            let frac: [f64; 3] = std::array::from_fn(|d| t[d] - base[d]);
            let mut idx = [0usize; 8];
            let mut wts = [0.0; 8];
            for (a, (ix, w)) in idx.iter_mut().zip(wts.iter_mut()).enumerate() {
                let o = crate::mesh::corner(a);
                *ix = g.index(std::array::from_fn(|d| base[d] as i64 + o[d] as i64));
                *w = (0..3)
                    .map(|d| if o[d] == 1 { frac[d] } else { 1.0 - frac[d] })
                    .product();
            }
            for i in 0..3 {
                let comp = &self.data[3 * i + j];
                m[(i, j)] = idx.iter().zip(&wts).map(|(&n, w)| w * comp[n]).sum();
            }
        }
        m
    }

    /// Samples at the Gauss points of `mesh`.
    pub fn to_gauss(&self, mesh: &HexMesh) -> TensorField {
        let values = (0..mesh.n_elements())
            .flat_map(|e| (0..GAUSS_PER_ELEMENT).map(move |q| (e, q)))
            .map(|(e, q)| self.sample(mesh.gauss_point(e, q)))
            .collect();
        TensorField::from_values(values, mesh.gauss_weight())
    }
}

/// `β^μ` with `curl⁺β^μ = μ_δ`, `div⁻β^μ = 0` and zero mean on the box.
pub fn solve_beta_mu(m: &GridMeasure) -> Result<EdgeField> {
    m.check_means(MEAN_TOL)?;
    crate::dislocation::require_divergence_free(m, DIVERGENCE_TOL)?;
    let grid = m.grid();
    if m.is_zero() {
        return Ok(EdgeField::zeros(grid));
    }
    let dims = grid.dims;
    let h = grid.spacing;
    let fft = Fft3::new(dims);
    let n = grid.len();

    // symbols of the forward difference along each axis
    let symbol = |d: usize, k: usize| {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / dims[d] as f64;
        (Complex64::from_polar(1.0, theta) - 1.0) / h[d]
    };
    let dplus: [Vec<Complex64>; 3] = std::array::from_fn(|d| (0..dims[d]).map(|k| symbol(d, k)).collect());

    let mut data = vec![vec![0.0; n]; 9];
    let mut hat: [Vec<Complex64>; 3] = std::array::from_fn(|_| vec![Complex64::default(); n]);
    for i in 0..3 {
        for (j, buf) in hat.iter_mut().enumerate() {
            buf.iter_mut()
                .zip(m.component(i, j))
                .for_each(|(z, v)| *z = Complex64::new(*v, 0.0));
            fft.forward(buf);
        }
        for idx in 0..n {
            let c = grid.coords(idx);
            let dp: [Complex64; 3] = std::array::from_fn(|d| dplus[d][c[d]]);
            let kappa2: f64 = dp.iter().map(|z| z.norm_sqr()).sum();
            if kappa2 == 0.0 {
                for buf in hat.iter_mut() {
                    buf[idx] = Complex64::default();
                }
                continue;
            }
            // backward difference symbol is −conj(D⁺)
            let dm: [Complex64; 3] = dp.map(|z| -z.conj());
            let psi: [Complex64; 3] = std::array::from_fn(|d| hat[d][idx] / kappa2);
            for a in 0..3 {
                let (b, d) = ((a + 1) % 3, (a + 2) % 3);
                hat[a][idx] = dm[b] * psi[d] - dm[d] * psi[b];
            }
        }
        for (j, buf) in hat.iter_mut().enumerate() {
            fft.inverse(buf);
            data[3 * i + j] = buf.iter().map(|z| z.re).collect();
        }
    }
    Ok(EdgeField {
        grid: grid.clone(),
        data,
    })
}

impl EdgeField {
    /// Fails unless the field lives on the same grid as `mu`.
    pub fn check_grid(&self, mu: &GridMeasure) -> Result<()> {
        if &self.grid != mu.grid() {
            return Err(Error::DimensionMismatch("edge field and measure grids differ".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_round_trip() {
        let dims = [4, 6, 5];
        let fft = Fft3::new(dims);
        let orig: Vec<Complex64> = (0..120).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut d = orig.clone();
        fft.forward(&mut d);
        fft.inverse(&mut d);
        assert!(d.iter().zip(&orig).all(|(a, b)| (a - b).norm() < 1e-13));
    }

    #[test]
    fn fft_matches_direct_sum() {
        let dims = [3, 4, 2];
        let fft = Fft3::new(dims);
        let x: Vec<Complex64> = (0..24).map(|i| Complex64::new(i as f64 * 0.5 - 3.0, (i % 5) as f64)).collect();
        let mut y = x.clone();
        fft.forward(&mut y);
        let k = [1usize, 3, 1];
        let mut want = Complex64::default();
        for (n, v) in x.iter().enumerate() {
            let c = [n % 3, (n / 3) % 4, n / 12];
            let phase: f64 = (0..3).map(|d| (k[d] * c[d]) as f64 / dims[d] as f64).sum();
            want += v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase);
        }
        assert!((y[k[0] + 3 * (k[1] + 4 * k[2])] - want).norm() < 1e-12);
    }

    #[test]
    fn gradients_are_curl_free() {
        let grid = PaddedGrid::periodic_box([0.0; 3], [0.25, 0.5, 0.2], [4, 3, 5]);
        let w: Vec<[f64; 3]> = (0..grid.len()).map(|n| [(n as f64).sin(), (n * n) as f64 * 0.01, -(n as f64)]).collect();
        let f = EdgeField::zeros(&grid).add_gradient(&w);
        assert!(f.curl().iter().flatten().all(|v| v.abs() < 1e-10));
    }
}
