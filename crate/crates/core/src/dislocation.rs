//! Dislocation loops as line measures `b⊗τ 𝓗¹⌞γ` and their mollified
//! rasterization onto a staggered periodic grid.
//!
//! Row `i`, spatial component `j` of the grid measure lives on the faces
//! normal to `e_j`: index `c` sits at `origin + h∘(c + ½(1 − e_j))`. Each
//! value is the average of the mollified density over its face, so the
//! forward-difference divergence of a closed loop vanishes cell by cell.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::HexMesh;

/// Closed polygonal loop with constant Burgers vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DislocationLoop {
    /// First and last vertex coincide for a closed loop.
    pub vertices: Vec<[f64; 3]>,
    pub burgers: [f64; 3],
}

impl DislocationLoop {
    pub fn new(vertices: Vec<[f64; 3]>, burgers: [f64; 3]) -> Self {
        Self { vertices, burgers }
    }

    /// Regular `n`-gon of circumradius `radius` in the plane spanned by
    /// `axes`, closed.
    pub fn regular_polygon(center: [f64; 3], radius: f64, n: usize, axes: [usize; 2], burgers: [f64; 3]) -> Self {
        let mut vertices: Vec<[f64; 3]> = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let mut p = center;
                p[axes[0]] += radius * t.cos();
                p[axes[1]] += radius * t.sin();
                p
            })
            .collect();
        vertices.push(vertices[0]);
        Self { vertices, burgers }
    }

    /// Axis-aligned square of side `side` in the plane spanned by `axes`.
    pub fn square(center: [f64; 3], side: f64, axes: [usize; 2], burgers: [f64; 3]) -> Self {
        let h = 0.5 * side;
        let corners = [(-h, -h), (h, -h), (h, h), (-h, h), (-h, -h)];
        let vertices = corners
            .iter()
            .map(|&(a, b)| {
                let mut p = center;
                p[axes[0]] += a;
                p[axes[1]] += b;
                p
            })
            .collect();
        Self { vertices, burgers }
    }

    pub fn is_closed(&self) -> bool {
        self.vertices.len() >= 2 && self.vertices.first() == self.vertices.last()
    }

    pub fn segments(&self) -> impl Iterator<Item = ([f64; 3], [f64; 3])> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| distance(a, b)).sum()
    }

    pub fn burgers_norm(&self) -> f64 {
        self.burgers.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Loop with Burgers vector multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vertices: self.vertices.clone(),
            burgers: self.burgers.map(|b| b * s),
        }
    }

    /// Closedness, non-degenerate segments, finite data, and (when `domain`
    /// is given) vertices strictly inside it.
    pub fn validate(&self, index: usize, domain: Option<&HexMesh>) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidLoop {
            index,
            reason: reason.into(),
        };
        if self.vertices.iter().flatten().chain(&self.burgers).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if !self.is_closed() {
            return Err(Error::OpenLoop { index });
        }
        if self.vertices.len() < 4 {
            return Err(invalid("a closed loop needs at least three distinct vertices"));
        }
        if self.segments().any(|(a, b)| a == b) {
            return Err(invalid("consecutive vertices coincide"));
        }
        if let Some(mesh) = domain {
            let o = mesh.origin();
            let s = mesh.size();
            let inside = |p: &[f64; 3]| (0..3).all(|d| p[d] > o[d] && p[d] < o[d] + s[d]);
            if !self.vertices.iter().all(inside) {
                return Err(invalid("vertex outside the domain"));
            }
        }
        Ok(())
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|d| (b[d] - a[d]).powi(2)).sum::<f64>().sqrt()
}

/// Finite union of loops.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LineMeasure {
    pub loops: Vec<DislocationLoop>,
}

impl LineMeasure {
    pub fn new(loops: Vec<DislocationLoop>) -> Self {
        Self { loops }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            loops: self.loops.iter().chain(&other.loops).cloned().collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            loops: self.loops.iter().map(|l| l.scaled(s)).collect(),
        }
    }

    pub fn validate(&self, domain: Option<&HexMesh>) -> Result<()> {
        self.loops.iter().enumerate().try_for_each(|(i, l)| l.validate(i, domain))
    }
}

/// `|μ|(Ω) = Σ |b| · length(γ)`.
pub fn total_variation(m: &LineMeasure) -> Result<f64> {
    m.validate(None)?;
    Ok(m.loops.iter().map(|l| l.burgers_norm() * l.length()).sum())
}

/// Zero for a union of closed loops; `OpenLoop` otherwise.
pub fn check_line_divergence_free(m: &LineMeasure) -> Result<f64> {
    m.validate(None)?;
    Ok(0.0)
}

/// Periodic box `B ⊇ Ω` sharing the spacing and node lattice of the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddedGrid {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    /// Cells between the lower face of `B` and the lower face of `Ω`.
    pub pad: [usize; 3],
    /// Cells of `Ω` along each axis.
    pub inner: [usize; 3],
}

fn smooth_size(n: usize) -> usize {
    (n..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("smooth numbers are unbounded")
}

impl PaddedGrid {
    /// Extends the mesh box by `max(4δ, side/4)` per face, then rounds each
    /// dimension up to a 5-smooth size for the FFT.
    pub fn around(mesh: &HexMesh, delta: f64) -> Self {
        let h = mesh.spacing();
        let cells = mesh.cells();
        let size = mesh.size();
        let o = mesh.origin();
        let pad: [usize; 3] = std::array::from_fn(|d| {
            let width = (4.0 * delta).max(0.25 * size[d]);
            (width / h[d] - 1e-9).ceil() as usize
        });
        let dims: [usize; 3] = std::array::from_fn(|d| smooth_size(cells[d] + 2 * pad[d]));
        Self {
            origin: std::array::from_fn(|d| o[d] - pad[d] as f64 * h[d]),
            spacing: h,
            dims,
            pad,
            inner: cells,
        }
    }

    /// Bare periodic box with no distinguished interior.
    pub fn periodic_box(origin: [f64; 3], spacing: [f64; 3], dims: [usize; 3]) -> Self {
        Self {
            origin,
            spacing,
            dims,
            pad: [0; 3],
            inner: dims,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.dims[d] as f64 * self.spacing[d])
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, c: [i64; 3]) -> usize {
        let w = |d: usize| c[d].rem_euclid(self.dims[d] as i64) as usize;
        w(0) + self.dims[0] * (w(1) + self.dims[1] * w(2))
    }

    #[inline]
    pub fn coords(&self, n: usize) -> [usize; 3] {
        let d = self.dims;
        [n % d[0], (n / d[0]) % d[1], n / (d[0] * d[1])]
    }

    fn check_mesh(&self, mesh: &HexMesh) -> Result<()> {
        let ok = mesh.cells() == self.inner
            && (0..3).all(|d| {
                (mesh.spacing()[d] - self.spacing[d]).abs() <= 1e-12 * self.spacing[d]
                    && (mesh.origin()[d] - (self.origin[d] + self.pad[d] as f64 * self.spacing[d])).abs()
                        <= 1e-9 * self.spacing[d]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("padded grid does not embed the mesh".into()))
        }
    }
}

/// Mollified, rasterized dislocation density on a [`PaddedGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: PaddedGrid,
    delta: f64,
    /// `data[3 i + j]`: row `i`, face-normal component `j`.
    data: Vec<Vec<f64>>,
    mean_correction: f64,
}

impl GridMeasure {
    pub fn zeros(grid: &PaddedGrid, delta: f64) -> Self {
        Self {
            grid: grid.clone(),
            delta,
            data: vec![vec![0.0; grid.len()]; 9],
            mean_correction: 0.0,
        }
    }

    /// Wraps raw face data, e.g. read from a file.
    pub fn from_components(grid: PaddedGrid, delta: f64, data: Vec<Vec<f64>>) -> Result<Self> {
        if data.len() != 9 || data.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::DimensionMismatch("grid measure needs nine arrays of grid size".into()));
        }
        Ok(Self {
            grid,
            delta,
            data,
            mean_correction: 0.0,
        })
    }

    pub fn grid(&self) -> &PaddedGrid {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn component(&self, row: usize, col: usize) -> &[f64] {
        &self.data[3 * row + col]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.data
    }

    /// Largest mean removed per component during rasterization.
    pub fn mean_correction(&self) -> f64 {
        self.mean_correction
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().flatten().all(|v| *v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            delta: self.delta,
            data: self.data.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
            mean_correction: self.mean_correction * s.abs(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch("grid measures on different grids".into()));
        }
        Ok(Self {
            grid: self.grid.clone(),
            delta: self.delta,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
            mean_correction: self.mean_correction.max(other.mean_correction),
        })
    }

    /// Component means over `B`.
    pub fn means(&self) -> [[f64; 3]; 3] {
        let n = self.grid.len() as f64;
        std::array::from_fn(|i| std::array::from_fn(|j| self.component(i, j).iter().sum::<f64>() / n))
    }

    /// Fails with `NonZeroMean` if a component mean exceeds `tol`.
    pub fn check_means(&self, tol: f64) -> Result<()> {
        let m = self.means();
        for (i, row) in m.iter().enumerate() {
            for (j, &mean) in row.iter().enumerate() {
                if mean.abs() > tol {
                    return Err(Error::NonZeroMean { row: i, col: j, mean });
                }
            }
        }
        Ok(())
    }

    /// `Σ_cells |μ_δ| · cell volume`, face values averaged to cell centers.
    pub fn mass(&self) -> f64 {
        let g = &self.grid;
        let mut total = 0.0;
        for n in 0..g.len() {
            let c = g.coords(n).map(|v| v as i64);
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let mut up = c;
                    up[j] += 1;
                    let v = 0.5 * (self.data[3 * i + j][n] + self.data[3 * i + j][g.index(up)]);
                    s += v * v;
                }
            }
            total += s.sqrt();
        }
        total * g.cell_volume()
    }

    /// Largest forward-difference divergence of any row, per cell.
    pub fn max_divergence(&self) -> f64 {
        let g = &self.grid;
        let mut worst = 0.0f64;
        for n in 0..g.len() {
            let c = g.coords(n).map(|v| v as i64);
            for i in 0..3 {
                let mut div = 0.0;
                for j in 0..3 {
                    let mut up = c;
                    up[j] += 1;
                    div += (self.data[3 * i + j][g.index(up)] - self.data[3 * i + j][n]) / g.spacing[j];
                }
                worst = worst.max(div.abs());
            }
        }
        worst
    }

    /// Writes `<stem>.json` (header) and `<stem>.bin` (nine little-endian
    /// `f64` arrays, x fastest, in row-major component order).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let header = GridMeasureHeader {
            dims: self.grid.dims,
            spacing: self.grid.spacing,
            origin: self.grid.origin,
            pad: self.grid.pad,
            inner: self.grid.inner,
            delta: self.delta,
            components: 9,
            dtype: "f64le".into(),
            data: format!("{stem}.bin"),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&header)?)?;
        let mut bytes = Vec::with_capacity(9 * 8 * self.grid.len());
        for v in self.data.iter().flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(dir.join(format!("{stem}.bin")))?.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(header_path: &Path) -> Result<Self> {
        let header: GridMeasureHeader = serde_json::from_slice(&fs::read(header_path)?)?;
        if header.components != 9 || header.dtype != "f64le" {
            return Err(Error::Config("unsupported grid measure encoding".into()));
        }
        let grid = PaddedGrid {
            origin: header.origin,
            spacing: header.spacing,
            dims: header.dims,
            pad: header.pad,
            inner: header.inner,
        };
        let dir = header_path.parent().unwrap_or(Path::new("."));
        let bytes = fs::read(dir.join(&header.data))?;
        if bytes.len() != 9 * 8 * grid.len() {
            return Err(Error::DimensionMismatch("grid measure data has the wrong length".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of eight bytes")))
            .collect();
        let data = values.chunks_exact(grid.len()).map(<[f64]>::to_vec).collect();
        GridMeasure::from_components(grid, header.delta, data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridMeasureHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    pad: [usize; 3],
    inner: [usize; 3],
    delta: f64,
    components: usize,
    dtype: String,
    data: String,
}

/// Largest per-cell row divergence of `μ_δ`, normalized by `|μ_δ|(B)/δ³`.
pub fn check_divergence_free(m: &GridMeasure) -> f64 {
    let mass = m.mass();
    if mass == 0.0 {
        return 0.0;
    }
    m.max_divergence() / (mass / m.delta.powi(3))
}

/// Fails with `NotDivergenceFree` above `tol`.
pub fn require_divergence_free(m: &GridMeasure, tol: f64) -> Result<f64> {
    let r = check_divergence_free(m);
    if r > tol {
        return Err(Error::NotDivergenceFree { residual: r });
    }
    Ok(r)
}

/// One-dimensional kernel `φ_δ(t) = 35/(32δ) (1 − (t/δ)²)³` on `|t| < δ`.
#[inline]
fn kernel(t: f64, delta: f64) -> f64 {
    let u = t / delta;
    if u.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        35.0 / (32.0 * delta) * w * w * w
    }
}

/// `∫_{−∞}^t φ_δ`.
#[inline]
fn kernel_cdf(t: f64, delta: f64) -> f64 {
    let u = t / delta;
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let u2 = u * u;
        0.5 + 35.0 / 32.0 * u * (1.0 - u2 * (1.0 - u2 * (0.6 - u2 / 7.0)))
    }
}

const GAUSS_ORDER: usize = 11;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre() -> &'static [(f64, f64); GAUSS_ORDER] {
    static RULE: OnceLock<[(f64, f64); GAUSS_ORDER]> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GAUSS_ORDER;
        std::array::from_fn(|k| {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for m in 2..=n {
                    let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            (0.5 * (1.0 + x), 0.5 * w)
        })
    })
}

struct Rasterizer<'a> {
    grid: &'a PaddedGrid,
    delta: f64,
    data: Vec<Vec<f64>>,
}

impl<'a> Rasterizer<'a> {
    fn new(grid: &'a PaddedGrid, delta: f64) -> Self {
        Self {
            grid,
            delta,
            data: vec![vec![0.0; grid.len()]; 9],
        }
    }

    fn deposit_segment(&mut self, a: [f64; 3], b: [f64; 3], burgers: [f64; 3]) {
        let len = distance(a, b);
        let h = self.grid.spacing.iter().copied().fold(f64::INFINITY, f64::min);
        let pieces = (len / h).ceil().max(1.0) as usize;
        let o = self.grid.origin;
        let y0: [f64; 3] = std::array::from_fn(|d| a[d] - o[d]);
        let dy: [f64; 3] = std::array::from_fn(|d| (b[d] - a[d]) / pieces as f64);
        for p in 0..pieces {
            let p0: [f64; 3] = std::array::from_fn(|d| y0[d] + p as f64 * dy[d]);
            let p1: [f64; 3] = std::array::from_fn(|d| y0[d] + (p + 1) as f64 * dy[d]);
            self.deposit_piece(p0, p1, burgers);
        }
    }

    /// Exact face averages of the mollified piece `[p0, p1]` (coordinates
    /// relative to the grid origin).
    fn deposit_piece(&mut self, p0: [f64; 3], p1: [f64; 3], burgers: [f64; 3]) {
        let len = distance(p0, p1);
        if len == 0.0 {
            return;
        }
        let tau: [f64; 3] = std::array::from_fn(|d| (p1[d] - p0[d]) / len);
        let h = self.grid.spacing;
        let delta = self.delta;
        let lo: [f64; 3] = std::array::from_fn(|d| p0[d].min(p1[d]));
        let hi: [f64; 3] = std::array::from_fn(|d| p0[d].max(p1[d]));
        let rule = gauss_legendre();
        let mut breaks: Vec<f64> = Vec::with_capacity(16);
        for j in 0..3 {
            if tau[j] == 0.0 {
                continue;
            }
            let (k, l) = ((j + 1) % 3, (j + 2) % 3);
            let face_area = h[k] * h[l];
            let face_range = (((lo[j] - delta) / h[j]).ceil() as i64, ((hi[j] + delta) / h[j]).floor() as i64);
            let cell_range = |d: usize| {
                (
                    ((lo[d] - delta) / h[d]).floor() as i64,
                    ((hi[d] + delta) / h[d]).ceil() as i64 - 1,
                )
            };
            let (rk, rl) = (cell_range(k), cell_range(l));
            for cj in face_range.0..=face_range.1 {
                let f = cj as f64 * h[j];
                for ck in rk.0..=rk.1 {
                    let (ak, bk) = (ck as f64 * h[k], (ck + 1) as f64 * h[k]);
                    for cl in rl.0..=rl.1 {
                        let (al, bl) = (cl as f64 * h[l], (cl + 1) as f64 * h[l]);
                        breaks.clear();
                        breaks.push(0.0);
                        breaks.push(len);
                        let mut crossing = |d: usize, level: f64| {
                            if tau[d] != 0.0 {
                                let s = (level - p0[d]) / tau[d];
                                if s > 0.0 && s < len {
                                    breaks.push(s);
                                }
                            }
                        };
                        crossing(j, f - delta);
                        crossing(j, f + delta);
                        for (d, (x0, x1)) in [(k, (ak, bk)), (l, (al, bl))] {
                            for x in [x0, x1] {
                                crossing(d, x - delta);
                                crossing(d, x + delta);
                            }
                        }
                        breaks.sort_by(f64::total_cmp);
                        let mut integral = 0.0;
                        for w in breaks.windows(2) {
                            let (s0, s1) = (w[0], w[1]);
                            if s1 <= s0 {
                                continue;
                            }
                            let mut part = 0.0;
                            for &(t, wt) in rule {
                                let s = s0 + t * (s1 - s0);
                                let yj = p0[j] + tau[j] * s;
                                let kj = kernel(f - yj, delta);
                                if kj == 0.0 {
                                    continue;
                                }
                                let yk = p0[k] + tau[k] * s;
                                let yl = p0[l] + tau[l] * s;
                                let mk = kernel_cdf(bk - yk, delta) - kernel_cdf(ak - yk, delta);
                                let ml = kernel_cdf(bl - yl, delta) - kernel_cdf(al - yl, delta);
                                part += wt * kj * mk * ml;
                            }
                            integral += part * (s1 - s0);
                        }
                        if integral == 0.0 {
                            continue;
                        }
                        let value = tau[j] * integral / face_area;
                        let mut c = [0i64; 3];
                        c[j] = cj;
                        c[k] = ck;
                        c[l] = cl;
                        let idx = self.grid.index(c);
                        for (i, bi) in burgers.iter().enumerate() {
                            if *bi != 0.0 {
                                self.data[3 * i + j][idx] += bi * value;
                            }
                        }
                    }
                }
            }
        }
    }

    fn finish(mut self) -> GridMeasure {
        let n = self.grid.len() as f64;
        let mut correction = 0.0f64;
        for comp in &mut self.data {
            let mean = comp.iter().sum::<f64>() / n;
            if mean != 0.0 {
                comp.iter_mut().for_each(|v| *v -= mean);
            }
            correction = correction.max(mean.abs());
        }
        GridMeasure {
            grid: self.grid.clone(),
            delta: self.delta,
            data: self.data,
            mean_correction: correction,
        }
    }
}

fn check_kernel_width(grid: &PaddedGrid, delta: f64) -> Result<()> {
    let min = 2.0 * grid.spacing.iter().copied().fold(0.0, f64::max);
    if !(delta >= min * (1.0 - 1e-12)) {
        return Err(Error::KernelTooNarrow { delta, min });
    }
    Ok(())
}

/// Rasterizes `m ∗ φ_δ` onto `grid` and removes component means.
pub fn mollify(m: &LineMeasure, grid: &PaddedGrid, delta: f64) -> Result<GridMeasure> {
    check_kernel_width(grid, delta)?;
    m.validate(None)?;
    let size = grid.size();
    let required = 3.0 * delta;
    for (index, l) in m.loops.iter().enumerate() {
        let distance = l
            .vertices
            .iter()
            .flat_map(|p| (0..3).map(move |d| (p[d] - grid.origin[d]).min(grid.origin[d] + size[d] - p[d])))
            .fold(f64::INFINITY, f64::min);
        if !(distance > required) {
            return Err(Error::LoopTooCloseToBoundary {
                index,
                distance,
                required,
            });
        }
    }
    let mut r = Rasterizer::new(grid, delta);
    for l in &m.loops {
        for (a, b) in l.segments() {
            r.deposit_segment(a, b, l.burgers);
        }
    }
    Ok(r.finish())
}

/// Straight line through `point` along `axis`, closing on itself through
/// the periodic box, with a uniform neutralizing background. Intended for
/// verification against infinite-line fields.
pub fn mollify_periodic_line(grid: &PaddedGrid, point: [f64; 3], axis: usize, burgers: [f64; 3], delta: f64) -> Result<GridMeasure> {
    check_kernel_width(grid, delta)?;
    let mut r = Rasterizer::new(grid, delta);
    let mut a = point;
    a[axis] = grid.origin[axis];
    let mut b = a;
    b[axis] += grid.size()[axis];
    r.deposit_segment(a, b, burgers);
    Ok(r.finish())
}

impl GridMeasure {
    /// Checks that the grid embeds `mesh` as its interior.
    pub fn check_mesh(&self, mesh: &HexMesh) -> Result<()> {
        self.grid.check_mesh(mesh)
    }
}
