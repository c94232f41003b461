//! Structured hexahedral meshes of axis-aligned boxes with trilinear elements
//! and the 2×2×2 Gauss rule.
//!
//! Local node `a` of an element sits at offset `(a & 1, (a >> 1) & 1, a >> 2)`
//! cells from the element's lower corner. Gauss points are numbered the same
//! way, bit `d` selecting the `+1/√3` abscissa along axis `d`.

use crate::error::{Error, Result};

pub const NODES_PER_ELEMENT: usize = 8;
pub const GAUSS_PER_ELEMENT: usize = 8;

pub(crate) const GAUSS_ABSCISSA: f64 = 0.577_350_269_189_625_8;

#[inline]
pub(crate) fn corner(a: usize) -> [usize; 3] {
    [a & 1, (a >> 1) & 1, a >> 2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    origin: [f64; 3],
    spacing: [f64; 3],
    cells: [usize; 3],
    periodic: bool,
}

impl HexMesh {
    /// Mesh of the box `[origin, origin + size]` with `cells[d]` elements along
    /// axis `d`.
    pub fn new(origin: [f64; 3], size: [f64; 3], cells: [usize; 3]) -> Result<Self> {
        for d in 0..3 {
            if !(size[d] > 0.0) || !size[d].is_finite() {
                return Err(Error::Config(format!("domain size along axis {d} must be positive")));
            }
            if cells[d] == 0 {
                return Err(Error::Config(format!("resolution along axis {d} must be positive")));
            }
        }
        Ok(Self {
            origin,
            spacing: std::array::from_fn(|d| size[d] / cells[d] as f64),
            cells,
            periodic: false,
        })
    }

    pub fn unit_cube(n: usize) -> Self {
        Self::new([0.0; 3], [1.0; 3], [n; 3]).expect("positive resolution")
    }

    /// Periodic mesh of the reference cell `[0, 1]³`; nodes on opposite faces
    /// are identified.
    pub fn periodic_cell(cells: [usize; 3]) -> Result<Self> {
        if cells.iter().any(|&c| c < 2) {
            return Err(Error::Config("periodic cells need at least two elements per axis".into()));
        }
        let mut m = Self::new([0.0; 3], [1.0; 3], cells)?;
        m.periodic = true;
        Ok(m)
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn size(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.spacing[d] * self.cells[d] as f64)
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        self.size().iter().product()
    }

    pub fn element_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn diameter(&self) -> f64 {
        self.size().iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn n_elements(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn node_dims(&self) -> [usize; 3] {
        if self.periodic {
            self.cells
        } else {
            std::array::from_fn(|d| self.cells[d] + 1)
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_dims().iter().product()
    }

    pub fn n_gauss(&self) -> usize {
        self.n_elements() * GAUSS_PER_ELEMENT
    }

    #[inline]
    pub fn node_index(&self, ijk: [usize; 3]) -> usize {
        let nd = self.node_dims();
        let w = |d: usize| if self.periodic { ijk[d] % nd[d] } else { ijk[d] };
        w(0) + nd[0] * (w(1) + nd[1] * w(2))
    }

    pub fn node_coords(&self, n: usize) -> [usize; 3] {
        let nd = self.node_dims();
        [n % nd[0], (n / nd[0]) % nd[1], n / (nd[0] * nd[1])]
    }

    pub fn node_position(&self, n: usize) -> [f64; 3] {
        let c = self.node_coords(n);
        std::array::from_fn(|d| self.origin[d] + c[d] as f64 * self.spacing[d])
    }

    #[inline]
    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let c = self.cells;
        [e % c[0], (e / c[0]) % c[1], e / (c[0] * c[1])]
    }

    #[inline]
    pub fn element_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.cells[0] * (ijk[1] + self.cells[1] * ijk[2])
    }

    #[inline]
    pub fn element_nodes(&self, e: usize) -> [usize; NODES_PER_ELEMENT] {
        let c = self.element_coords(e);
        std::array::from_fn(|a| {
            let o = corner(a);
            self.node_index([c[0] + o[0], c[1] + o[1], c[2] + o[2]])
        })
    }

    pub fn cell_center(&self, e: usize) -> [f64; 3] {
        let c = self.element_coords(e);
        std::array::from_fn(|d| self.origin[d] + (c[d] as f64 + 0.5) * self.spacing[d])
    }

    /// Physical position of Gauss point `g` of element `e`.
    pub fn gauss_point(&self, e: usize, g: usize) -> [f64; 3] {
        let c = self.cell_center(e);
        let o = corner(g);
        std::array::from_fn(|d| {
            let s = if o[d] == 1 { 1.0 } else { -1.0 };
            c[d] + s * GAUSS_ABSCISSA * 0.5 * self.spacing[d]
        })
    }

    /// Quadrature weight shared by every Gauss point.
    pub fn gauss_weight(&self) -> f64 {
        self.element_volume() / GAUSS_PER_ELEMENT as f64
    }

    pub fn reference(&self) -> Q1Reference {
        Q1Reference::new(self.spacing)
    }

    /// For every node, the `(element, local node)` pairs that touch it, in
    /// increasing element order.
    pub fn incidence(&self) -> Incidence {
        let n = self.n_nodes();
        let mut counts = vec![0usize; n + 1];
        for e in 0..self.n_elements() {
            for node in self.element_nodes(e) {
                counts[node + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut pairs = vec![(0u32, 0u8); counts[n]];
        for e in 0..self.n_elements() {
            for (a, node) in self.element_nodes(e).into_iter().enumerate() {
                pairs[fill[node]] = (e as u32, a as u8);
                fill[node] += 1;
            }
        }
        Incidence {
            offsets: counts,
            pairs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Incidence {
    offsets: Vec<usize>,
    pairs: Vec<(u32, u8)>,
}

impl Incidence {
    pub fn of(&self, node: usize) -> &[(u32, u8)] {
        &self.pairs[self.offsets[node]..self.offsets[node + 1]]
    }
}

/// Shape function values and physical gradients at the Gauss points of an
/// element with the given spacing.
#[derive(Debug, Clone)]
pub struct Q1Reference {
    /// `shape[g][a]`
    pub shape: [[f64; NODES_PER_ELEMENT]; GAUSS_PER_ELEMENT],
    /// `grad[g][a][d] = ∂N_a/∂x_d` at Gauss point `g`.
    pub grad: [[[f64; 3]; NODES_PER_ELEMENT]; GAUSS_PER_ELEMENT],
    pub weight: f64,
}

impl Q1Reference {
    pub fn new(spacing: [f64; 3]) -> Self {
        let mut shape = [[0.0; 8]; 8];
        let mut grad = [[[0.0; 3]; 8]; 8];
        for g in 0..8 {
            let og = corner(g);
            let xi: [f64; 3] =
                std::array::from_fn(|d| if og[d] == 1 { GAUSS_ABSCISSA } else { -GAUSS_ABSCISSA });
            for a in 0..8 {
                let oa = corner(a);
                let s: [f64; 3] = std::array::from_fn(|d| if oa[d] == 1 { 1.0 } else { -1.0 });
                let f: [f64; 3] = std::array::from_fn(|d| 0.5 * (1.0 + s[d] * xi[d]));
                shape[g][a] = f[0] * f[1] * f[2];
                for d in 0..3 {
                    let mut v = s[d] / spacing[d];
                    for e in 0..3 {
                        if e != d {
                            v *= f[e];
                        }
                    }
                    grad[g][a][d] = v;
                }
            }
        }
        Self {
            shape,
            grad,
            weight: spacing.iter().product::<f64>() / 8.0,
        }
    }
}
