//! Cell-wise elasticity tensor fields, periodic microstructures and the
//! mean-oscillation (VMO) diagnostic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::HexMesh;
use crate::tensor::{check_ellipticity, relative_eigenvalues, EllipticityReport, Tensor4};

/// A `Y`-periodic two-phase (or homogeneous) tensor function on `[0, 1)³`.
#[derive(Debug, Clone, PartialEq)]
pub enum Microstructure {
    Homogeneous(Tensor4),
    /// Phase 0 where `y[axis] < fraction`, phase 1 elsewhere.
    Laminate {
        axis: usize,
        fraction: f64,
        phases: [Tensor4; 2],
    },
    /// Alternating phases on the four quadrants of the `(axes[0], axes[1])`
    /// plane; invariant along the remaining axis.
    Checkerboard {
        axes: [usize; 2],
        phases: [Tensor4; 2],
    },
    /// Piecewise-constant phases on a `blocks` grid of sub-cubes.
    Voxels {
        blocks: [usize; 3],
        phase_of_block: Vec<u8>,
        phases: [Tensor4; 2],
    },
}

impl Microstructure {
    /// Independent Bernoulli phase assignment per block; phase 0 with
    /// probability `fraction`.
    pub fn random_two_phase(blocks: [usize; 3], fraction: f64, phases: [Tensor4; 2], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = blocks.iter().product();
        let phase_of_block = (0..n).map(|_| u8::from(rng.gen::<f64>() >= fraction)).collect();
        Microstructure::Voxels {
            blocks,
            phase_of_block,
            phases,
        }
    }

    pub fn phases(&self) -> Vec<Tensor4> {
        match self {
            Microstructure::Homogeneous(c) => vec![*c],
            Microstructure::Laminate { phases, .. }
            | Microstructure::Checkerboard { phases, .. }
            | Microstructure::Voxels { phases, .. } => phases.to_vec(),
        }
    }

    /// Phase index at `y`, taken modulo the unit cell.
    pub fn phase_at(&self, y: [f64; 3]) -> usize {
        let y: [f64; 3] = std::array::from_fn(|d| y[d] - y[d].floor());
        match self {
            Microstructure::Homogeneous(_) => 0,
            Microstructure::Laminate { axis, fraction, .. } => usize::from(y[*axis] >= *fraction),
            Microstructure::Checkerboard { axes, .. } => {
                let a = (2.0 * y[axes[0]]).floor() as usize;
                let b = (2.0 * y[axes[1]]).floor() as usize;
                (a + b) % 2
            }
            Microstructure::Voxels {
                blocks,
                phase_of_block,
                ..
            } => {
                let ix: [usize; 3] =
                    std::array::from_fn(|d| ((y[d] * blocks[d] as f64).floor() as usize).min(blocks[d] - 1));
                phase_of_block[ix[0] + blocks[0] * (ix[1] + blocks[1] * ix[2])] as usize
            }
        }
    }

    pub fn tensor_at(&self, y: [f64; 3]) -> Tensor4 {
        self.phases()[self.phase_at(y)]
    }

    /// Same structure with the phase tensors exchanged.
    pub fn with_swapped_phases(&self) -> Self {
        let mut out = self.clone();
        match &mut out {
            Microstructure::Homogeneous(_) => {}
            Microstructure::Laminate { phases, .. }
            | Microstructure::Checkerboard { phases, .. }
            | Microstructure::Voxels { phases, .. } => phases.swap(0, 1),
        }
        out
    }
}

/// Piecewise-constant tensor field, one tensor per mesh cell. Distinct
/// tensors are stored once in a palette.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticTensorField {
    cells: [usize; 3],
    palette: Vec<Tensor4>,
    ids: Vec<u32>,
}

impl ElasticTensorField {
    pub fn constant(mesh: &HexMesh, c: Tensor4) -> Self {
        Self {
            cells: mesh.cells(),
            palette: vec![c],
            ids: vec![0; mesh.n_elements()],
        }
    }

    pub fn isotropic(mesh: &HexMesh, lambda: f64, mu: f64) -> Self {
        Self::constant(mesh, Tensor4::isotropic(lambda, mu))
    }

    /// Laminate on `Ω` whose period is the full extent of `Ω` along `axis`.
    pub fn two_phase_laminate(mesh: &HexMesh, axis: usize, fraction: f64, phases: [Tensor4; 2]) -> Self {
        Self::periodic_sampled(
            mesh,
            &Microstructure::Laminate {
                axis,
                fraction,
                phases,
            },
            mesh.size()[axis],
        )
    }

    /// `C(x) = C_Y((x − origin)/ε)` sampled at cell centers.
    pub fn periodic_sampled(mesh: &HexMesh, micro: &Microstructure, epsilon: f64) -> Self {
        let o = mesh.origin();
        let ids = (0..mesh.n_elements())
            .map(|e| {
                let x = mesh.cell_center(e);
                micro.phase_at(std::array::from_fn(|d| (x[d] - o[d]) / epsilon)) as u32
            })
            .collect();
        Self {
            cells: mesh.cells(),
            palette: micro.phases(),
            ids,
        }
    }

    /// Samples an arbitrary tensor function at cell centers; bitwise-equal
    /// tensors share a palette slot.
    pub fn from_fn(mesh: &HexMesh, f: impl Fn([f64; 3]) -> Tensor4) -> Self {
        let mut palette: Vec<Tensor4> = Vec::new();
        let ids = (0..mesh.n_elements())
            .map(|e| {
                let c = f(mesh.cell_center(e));
                match palette.iter().position(|p| *p == c) {
                    Some(i) => i as u32,
                    None => {
                        palette.push(c);
                        (palette.len() - 1) as u32
                    }
                }
            })
            .collect();
        Self {
            cells: mesh.cells(),
            palette,
            ids,
        }
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn palette(&self) -> &[Tensor4] {
        &self.palette
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn tensor(&self, e: usize) -> &Tensor4 {
        &self.palette[self.ids[e] as usize]
    }

    pub fn n_cells(&self) -> usize {
        self.ids.len()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            cells: self.cells,
            palette: self.palette.iter().map(|c| c.scale(s)).collect(),
            ids: self.ids.clone(),
        }
    }

    pub fn check_mesh(&self, mesh: &HexMesh) -> Result<()> {
        if self.cells != mesh.cells() {
            return Err(Error::DimensionMismatch(format!(
                "tensor field has {:?} cells, mesh has {:?}",
                self.cells,
                mesh.cells()
            )));
        }
        Ok(())
    }

    /// Extremal relative eigenvalues over all cells.
    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        self.palette.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let ev = relative_eigenvalues(c);
            (lo.min(ev[0]), hi.max(ev[5]))
        })
    }

    /// Checks every cell tensor against `(c0, c1)`.
    pub fn check_ellipticity(&self, c0: f64, c1: f64) -> Result<EllipticityReport> {
        let mut out = EllipticityReport {
            passes: true,
            min_relative: f64::INFINITY,
            max_relative: f64::NEG_INFINITY,
        };
        for c in &self.palette {
            let r = check_ellipticity(c, c0, c1)?;
            out.passes &= r.passes;
            out.min_relative = out.min_relative.min(r.min_relative);
            out.max_relative = out.max_relative.max(r.max_relative);
        }
        Ok(out)
    }

    /// Symmetry check plus strict positivity; returns the measured bounds.
    pub fn require_elliptic(&self) -> Result<(f64, f64)> {
        for c in &self.palette {
            let d = c.symmetry_defect();
            if d > crate::tensor::SYMMETRY_TOL {
                return Err(Error::SymmetryViolation { defect: d });
            }
        }
        let (lo, hi) = self.ellipticity_bounds();
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::NotElliptic {
                min: lo,
                max: hi,
                c0: 0.0,
                c1: f64::INFINITY,
            });
        }
        Ok((lo, hi))
    }

    fn phase_fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.palette.len()];
        for &i in &self.ids {
            counts[i as usize] += 1;
        }
        let n = self.ids.len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Cell average `⟨C⟩`.
    pub fn mean(&self) -> Tensor4 {
        self.phase_fractions()
            .iter()
            .zip(&self.palette)
            .fold(Tensor4::zero(), |acc, (f, c)| acc.add(&c.scale(*f)))
    }

    /// `⟨C⁻¹⟩⁻¹`, inverses taken on the symmetric matrices.
    pub fn harmonic_mean(&self) -> Option<Tensor4> {
        let mut acc = Tensor4::zero();
        for (f, c) in self.phase_fractions().iter().zip(&self.palette) {
            acc = acc.add(&c.inverse_on_sym()?.scale(*f));
        }
        acc.inverse_on_sym()
    }
}

/// Sampled mean-oscillation modulus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VmoReport {
    /// Radii in decreasing order, after clamping to the domain diameter.
    pub radii: Vec<f64>,
    /// `ω(r)` for each radius.
    pub omega: Vec<f64>,
    /// Number of balls evaluated per radius.
    pub balls: Vec<usize>,
    pub clamped: bool,
    /// `ω` is non-increasing along the decreasing radius schedule.
    pub monotone: bool,
    pub lattice: String,
}

/// Approximates `ω_Ω(C, r) = sup_{B_ρ ⊆ Ω, ρ ≤ r} ⨍_{B_ρ} |C − ⨍_{B_ρ} C|`.
///
/// The supremum runs over balls centered at cell centers with radii
/// `ρ ∈ {r, r/2, r/4}`; ball averages are cell-center sums. Radii beyond the
/// domain diameter are clamped.
pub fn vmo_modulus(field: &ElasticTensorField, mesh: &HexMesh, radii: &[f64]) -> Result<VmoReport> {
    field.check_mesh(mesh)?;
    let diam = mesh.diameter();
    let mut clamped = false;
    let mut rs: Vec<f64> = radii
        .iter()
        .map(|&r| {
            if r > diam {
                clamped = true;
                diam
            } else {
                r
            }
        })
        .collect();
    if rs.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("VMO radii must be positive".into()));
    }
    rs.sort_by(|a, b| b.total_cmp(a));

    let h = mesh.spacing();
    let cells = mesh.cells();
    let size = mesh.size();
    let palette = field.palette();
    let mut omega = Vec::with_capacity(rs.len());
    let mut balls = Vec::with_capacity(rs.len());
    for &r in &rs {
        let mut sup = 0.0f64;
        let mut count = 0usize;
        if palette.len() > 1 {
            for rho in [r, r / 2.0, r / 4.0] {
                let (s, c) = sup_oscillation(field, cells, h, size, rho);
                sup = sup.max(s);
                count += c;
            }
        }
        omega.push(sup);
        balls.push(count);
    }
    let monotone = omega.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    Ok(VmoReport {
        radii: rs,
        omega,
        balls,
        clamped,
        monotone,
        lattice: "ball centers at cell centers, radii {r, r/2, r/4}, balls contained in the domain".into(),
    })
}

fn sup_oscillation(field: &ElasticTensorField, cells: [usize; 3], h: [f64; 3], size: [f64; 3], rho: f64) -> (f64, usize) {
    let reach: [i64; 3] = std::array::from_fn(|d| (rho / h[d]).floor() as i64);
    let mut offsets = Vec::new();
    for k in -reach[2]..=reach[2] {
        for j in -reach[1]..=reach[1] {
            for i in -reach[0]..=reach[0] {
                let r2 = (i as f64 * h[0]).powi(2) + (j as f64 * h[1]).powi(2) + (k as f64 * h[2]).powi(2);
                if r2 <= rho * rho * (1.0 + 1e-12) {
                    offsets.push([i, j, k]);
                }
            }
        }
    }
    // centers whose ball fits inside the box
    let range: Vec<(i64, i64)> = (0..3)
        .map(|d| {
            let lo = ((rho / h[d]) - 0.5 - 1e-9).ceil().max(0.0) as i64;
            let hi = ((size[d] - rho) / h[d] - 0.5 + 1e-9).floor() as i64;
            (lo, hi.min(cells[d] as i64 - 1))
        })
        .collect();
    if range.iter().any(|(lo, hi)| lo > hi) {
        return (0.0, 0);
    }
    let palette = field.palette();
    let ids = field.ids();
    let mut counts = vec![0usize; palette.len()];
    let mut sup = 0.0f64;
    let mut n_balls = 0usize;
    for ck in range[2].0..=range[2].1 {
        for cj in range[1].0..=range[1].1 {
            for ci in range[0].0..=range[0].1 {
                counts.iter_mut().for_each(|c| *c = 0);
                for o in &offsets {
                    let (i, j, k) = (ci + o[0], cj + o[1], ck + o[2]);
                    let e = i as usize + cells[0] * (j as usize + cells[1] * k as usize);
                    counts[ids[e] as usize] += 1;
                }
                let total = offsets.len() as f64;
                let mean = counts
                    .iter()
                    .zip(palette)
                    .fold(nalgebra::Matrix6::zeros(), |acc, (&n, c)| acc + c.mandel() * (n as f64 / total));
                let dev: f64 = counts
                    .iter()
                    .zip(palette)
                    .filter(|(n, _)| **n > 0)
                    .map(|(&n, c)| n as f64 * (c.mandel() - mean).norm())
                    .sum::<f64>()
                    / total;
                sup = sup.max(dev);
                n_balls += 1;
            }
        }
    }
    (sup, n_balls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_has_zero_oscillation() {
        let mesh = HexMesh::unit_cube(8);
        let f = ElasticTensorField::isotropic(&mesh, 1.0, 2.0);
        let r = vmo_modulus(&f, &mesh, &[0.4, 0.2, 0.1]).unwrap();
        assert!(r.omega.iter().all(|&w| w == 0.0));
        assert!(r.monotone);
    }

    #[test]
    fn oversized_radius_is_clamped() {
        let mesh = HexMesh::unit_cube(4);
        let f = ElasticTensorField::isotropic(&mesh, 1.0, 2.0);
        let r = vmo_modulus(&f, &mesh, &[2.0 * mesh.diameter()]).unwrap();
        assert!(r.clamped);
        assert_eq!(r.radii, vec![mesh.diameter()]);
    }

    #[test]
    fn laminate_oscillation_is_bounded_by_contrast() {
        let mesh = HexMesh::unit_cube(16);
        let (a, b) = (Tensor4::isotropic(1.0, 1.0), Tensor4::isotropic(10.0, 10.0));
        let micro = Microstructure::Laminate {
            axis: 0,
            fraction: 0.5,
            phases: [a, b],
        };
        let f = ElasticTensorField::periodic_sampled(&mesh, &micro, 0.25);
        let r = vmo_modulus(&f, &mesh, &[0.25, 0.125]).unwrap();
        let contrast = (b.mandel() - a.mandel()).norm();
        assert!(r.omega.iter().all(|&w| w > 0.0 && w <= contrast));
    }

    #[test]
    fn laminate_sampling_is_face_aligned() {
        let mesh = HexMesh::unit_cube(8);
        let f = ElasticTensorField::two_phase_laminate(
            &mesh,
            1,
            0.5,
            [Tensor4::isotropic(1.0, 1.0), Tensor4::isotropic(2.0, 2.0)],
        );
        for e in 0..mesh.n_elements() {
            let y = mesh.cell_center(e)[1];
            assert_eq!(f.ids()[e], u32::from(y > 0.5));
        }
    }

    #[test]
    fn voigt_and_reuss_means_of_constant_field() {
        let mesh = HexMesh::unit_cube(2);
        let c = Tensor4::isotropic(0.5, 1.5);
        let f = ElasticTensorField::constant(&mesh, c);
        assert_eq!(f.mean(), c);
        assert!((f.harmonic_mean().unwrap().mandel() - c.mandel()).amax() < 1e-13);
    }
}
