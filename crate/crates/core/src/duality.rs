//! Duality solutions for rough forcing, the duality-identity verifier, and
//! the incompatible-elasticity pipeline `β = β^μ + Du`.

use serde::{Deserialize, Serialize};

use crate::dislocation::{mollify, total_variation, GridMeasure, LineMeasure, PaddedGrid};
use crate::error::{Error, Result};
use crate::fem::{project_admissible, NeumannSolver, SolveStats, SolverOptions};
use crate::field::{Exponent, TensorField, VectorField};
use crate::material::ElasticTensorField;
use crate::mesh::{HexMesh, GAUSS_ABSCISSA, GAUSS_PER_ELEMENT};
use crate::spectral::{solve_beta_mu, EdgeField};
use crate::tensor::{skew, Mat3};

/// Decreasing filter widths for the approximating forcings `F_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollificationSchedule {
    /// First width in units of the (largest) mesh spacing.
    pub first_width_cells: f64,
    /// Ratio between consecutive widths, in `(0, 1)`.
    pub ratio: f64,
    /// Maximal number of stages.
    pub cap: usize,
    /// Relative `W^{1,3/2}` Cauchy tolerance.
    pub tolerance: f64,
}

impl Default for MollificationSchedule {
    fn default() -> Self {
        Self {
            first_width_cells: 2.0,
            ratio: 0.25,
            cap: 6,
            tolerance: 1e-6,
        }
    }
}

impl MollificationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.first_width_cells > 0.0) || !(self.ratio > 0.0 && self.ratio < 1.0) || self.cap == 0 || !(self.tolerance > 0.0) {
            return Err(Error::Config(
                "schedule needs a positive first width, a ratio in (0, 1), a positive cap and a positive tolerance".into(),
            ));
        }
        Ok(())
    }

    /// Physical widths `δ_k` on `mesh`.
    pub fn widths(&self, mesh: &HexMesh) -> Vec<f64> {
        let h = mesh.spacing().iter().copied().fold(0.0, f64::max);
        (0..self.cap)
            .map(|k| self.first_width_cells * h * self.ratio.powi(k as i32))
            .collect()
    }
}

/// Separable Gaussian filter over the Gauss-point lattice of a box mesh,
/// truncated at four standard deviations and renormalized at the boundary.
#[derive(Debug, Clone)]
pub struct GaussianFilter {
    sigma: f64,
    /// Per axis, for each lattice position, `(neighbor, weight)` pairs.
    rows: Option<[Vec<Vec<(usize, f64)>>; 3]>,
    lattice: [usize; 3],
}

impl GaussianFilter {
    pub fn new(mesh: &HexMesh, sigma: f64) -> Self {
        let lattice = mesh.cells().map(|c| 2 * c);
        let reach = 4.0 * sigma;
        let mut any = false;
        let rows: [Vec<Vec<(usize, f64)>>; 3] = std::array::from_fn(|d| {
            let h = mesh.spacing()[d];
            let pos = |p: usize| {
                let s = if p % 2 == 1 { 1.0 } else { -1.0 };
                ((p / 2) as f64 + 0.5 + s * 0.5 * GAUSS_ABSCISSA) * h
            };
            (0..lattice[d])
                .map(|p| {
                    let x = pos(p);
                    let mut row: Vec<(usize, f64)> = (0..lattice[d])
                        .filter_map(|q| {
                            let r = (pos(q) - x).abs();
                            (r <= reach).then(|| (q, (-0.5 * (r / sigma).powi(2)).exp()))
                        })
                        .collect();
                    if row.len() > 1 {
                        any = true;
                    }
                    let s: f64 = row.iter().map(|(_, w)| w).sum();
                    row.iter_mut().for_each(|(_, w)| *w /= s);
                    row
                })
                .collect()
        });
        Self {
            sigma,
            rows: any.then_some(rows),
            lattice,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// True when the width is below the Gauss-point spacing and the filter
    /// returns its input unchanged.
    pub fn is_identity(&self) -> bool {
        self.rows.is_none()
    }

    pub fn apply(&self, f: &TensorField) -> TensorField {
        let Some(rows) = &self.rows else {
            return f.clone();
        };
        let [nx, ny, nz] = self.lattice;
        let (cx, cy) = (nx / 2, ny / 2);
        let gauss_index = |i: usize, j: usize, k: usize| {
            let e = i / 2 + cx * (j / 2 + cy * (k / 2));
            GAUSS_PER_ELEMENT * e + (i & 1) + ((j & 1) << 1) + ((k & 1) << 2)
        };
        let lin = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
        let mut cur: Vec<Mat3> = vec![Mat3::zeros(); nx * ny * nz];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    cur[lin(i, j, k)] = f.values()[gauss_index(i, j, k)];
                }
            }
        }
        let mut next = vec![Mat3::zeros(); cur.len()];
        for (d, axis_rows) in rows.iter().enumerate() {
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = [i, j, k];
                        let mut acc = Mat3::zeros();
                        for &(q, w) in &axis_rows[p[d]] {
                            let mut s = p;
                            s[d] = q;
                            acc += cur[lin(s[0], s[1], s[2])] * w;
                        }
                        next[lin(i, j, k)] = acc;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let mut values = vec![Mat3::zeros(); f.len()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values[gauss_index(i, j, k)] = cur[lin(i, j, k)];
                }
            }
        }
        TensorField::from_values(values, f.weight())
    }
}

/// One stage of the approximation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageRecord {
    pub width: f64,
    pub filter_active: bool,
    /// `‖u_k − u_{k−1}‖_{W^{1,3/2}} / ‖u_{k−1}‖_{W^{1,3/2}}`; absent on the first stage.
    pub defect: Option<f64>,
    pub forcing_norm: f64,
    pub correction_norm: f64,
    pub iterations: usize,
    pub relative_residual: f64,
    /// The forcing equalled the previous one bitwise and its solution was reused.
    pub reused: bool,
}

/// Cap reached without meeting the Cauchy tolerance.
#[derive(Debug, Clone)]
pub struct CauchyFailure {
    pub defects: Vec<f64>,
    pub stages: Vec<StageRecord>,
    pub last: VectorField,
}

#[derive(Debug, Clone)]
pub struct DualitySolution {
    pub u: VectorField,
    pub stages: Vec<StageRecord>,
}

/// Limit of variational solutions with filtered forcings `F_k`.
pub fn solve_duality(solver: &NeumannSolver, f: &TensorField, schedule: &MollificationSchedule) -> Result<DualitySolution> {
    schedule.validate()?;
    let mesh = solver.mesh();
    if !f.is_finite() {
        return Err(Error::Config("forcing has non-finite entries".into()));
    }
    if f.values().iter().all(|m| m.iter().all(|v| *v == 0.0)) {
        return Ok(DualitySolution {
            u: VectorField::zeros(mesh),
            stages: vec![StageRecord {
                width: schedule.widths(mesh)[0],
                filter_active: false,
                defect: None,
                forcing_norm: 0.0,
                correction_norm: 0.0,
                iterations: 0,
                relative_residual: 0.0,
                reused: false,
            }],
        });
    }
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut defects = Vec::new();
    let mut prev: Option<(TensorField, VectorField, SolveStats)> = None;
    for width in schedule.widths(mesh) {
        let filter = GaussianFilter::new(mesh, width);
        let fk = project_admissible(&filter.apply(f));
        let reused = prev.as_ref().is_some_and(|(pf, _, _)| pf == fk.field());
        let (uk, stats) = if reused {
            let (_, pu, ps) = prev.as_ref().expect("checked above");
            (pu.clone(), *ps)
        } else {
            solver.solve(&fk)?
        };
        let defect = prev.as_ref().map(|(_, pu, _)| {
            let base = pu.w1p_norm(mesh, Exponent::ThreeHalves);
            let diff = uk.sub(pu).w1p_norm(mesh, Exponent::ThreeHalves);
            if diff == 0.0 {
                0.0
            } else if base == 0.0 {
                f64::INFINITY
            } else {
                diff / base
            }
        });
        log::info!("duality stage {}: width {width:e}, defect {defect:?}", stages.len() + 1);
        stages.push(StageRecord {
            width,
            filter_active: !filter.is_identity(),
            defect,
            forcing_norm: fk.field().lp_norm(Exponent::ThreeHalves),
            correction_norm: fk.correction_norm(),
            iterations: stats.iterations,
            relative_residual: stats.relative_residual,
            reused,
        });
        if let Some(d) = defect {
            defects.push(d);
            if d < schedule.tolerance {
                return Ok(DualitySolution { u: uk, stages });
            }
        }
        prev = Some((fk.into_field(), uk, stats));
    }
    let last = prev.map(|(_, u, _)| u).expect("schedule has at least one stage");
    Err(Error::NotCauchy(Box::new(CauchyFailure { defects, stages, last })))
}

fn duality_defect(f: &TensorField, g: &TensorField, u: &VectorField, v: &VectorField, mesh: &HexMesh) -> f64 {
    let scale = f.lp_norm(Exponent::ThreeHalves) * g.lp_norm(Exponent::Three);
    if scale == 0.0 {
        return 0.0;
    }
    let lhs = g.inner(&u.gradient(mesh));
    let rhs = f.inner(&v.gradient(mesh));
    (lhs - rhs).abs() / scale
}

/// `|∫G·Du − ∫F·Dv| / (‖F‖_{3/2}‖G‖_3)` with `u` the duality solution for
/// `F` and `v` the variational solution for `G`, both forcings projected.
pub fn verify_duality_identity(
    solver: &NeumannSolver,
    f: &TensorField,
    g: &TensorField,
    schedule: &MollificationSchedule,
) -> Result<f64> {
    let f = project_admissible(f).into_field();
    let g = project_admissible(g).into_field();
    let u = solve_duality(solver, &f, schedule)?.u;
    let (v, _) = solver.solve(&project_admissible(&g))?;
    Ok(duality_defect(&f, &g, &u, &v, solver.mesh()))
}

/// Defects for `(F, G)` index pairs, solving each distinct forcing once.
pub fn verify_duality_pairs(
    solver: &NeumannSolver,
    fs: &[TensorField],
    gs: &[TensorField],
    pairs: &[(usize, usize)],
    schedule: &MollificationSchedule,
) -> Result<Vec<f64>> {
    let fs: Vec<TensorField> = fs.iter().map(|f| project_admissible(f).into_field()).collect();
    let gs: Vec<TensorField> = gs.iter().map(|g| project_admissible(g).into_field()).collect();
    let mut us: Vec<Option<VectorField>> = vec![None; fs.len()];
    let mut vs: Vec<Option<VectorField>> = vec![None; gs.len()];
    let mut out = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i >= fs.len() || j >= gs.len() {
            return Err(Error::DimensionMismatch(format!("pair ({i}, {j}) out of range")));
        }
        if us[i].is_none() {
            us[i] = Some(solve_duality(solver, &fs[i], schedule)?.u);
        }
        if vs[j].is_none() {
            vs[j] = Some(solver.solve(&project_admissible(&gs[j]))?.0);
        }
        out.push(duality_defect(
            &fs[i],
            &gs[j],
            us[i].as_ref().expect("filled"),
            vs[j].as_ref().expect("filled"),
            solver.mesh(),
        ));
    }
    Ok(out)
}

/// One entry of the smooth test dictionary, on normalized coordinates
/// `x̂ = (x − origin)/size ∈ [0, 1]³`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DictionaryEntry {
    /// `e_row ⊗ ∇p` with `p = x̂^powers`.
    PolynomialGradient { row: usize, powers: [u32; 3] },
    /// `η(|x̂ − center|/radius) E` with `η(t) = (1 − t²)³`.
    Bump { center: [f64; 3], radius: f64, matrix: [[f64; 3]; 3] },
}

impl DictionaryEntry {
    pub fn eval(&self, xh: [f64; 3], size: [f64; 3]) -> Mat3 {
        match self {
            DictionaryEntry::PolynomialGradient { row, powers } => {
                let mut m = Mat3::zeros();
                for d in 0..3 {
                    if powers[d] == 0 {
                        continue;
                    }
                    let mut v = powers[d] as f64 / size[d];
                    for e in 0..3 {
                        let p = if e == d { powers[e] - 1 } else { powers[e] };
                        v *= xh[e].powi(p as i32);
                    }
                    m[(*row, d)] = v;
                }
                m
            }
            DictionaryEntry::Bump { center, radius, matrix } => {
                let t2 = (0..3).map(|d| (xh[d] - center[d]).powi(2)).sum::<f64>() / (radius * radius);
                if t2 >= 1.0 {
                    return Mat3::zeros();
                }
                let w = (1.0 - t2).powi(3);
                Mat3::from_fn(|i, j| w * matrix[i][j])
            }
        }
    }

    pub fn field(&self, mesh: &HexMesh) -> TensorField {
        let o = mesh.origin();
        let s = mesh.size();
        TensorField::from_fn(mesh, |x| self.eval(std::array::from_fn(|d| (x[d] - o[d]) / s[d]), s))
    }
}

/// The fixed 24-entry dictionary: twelve polynomial gradients of degree at
/// most three and twelve compactly supported bumps with non-symmetric
/// matrices.
pub fn test_dictionary() -> Vec<DictionaryEntry> {
    let powers: [[u32; 3]; 12] = [
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 1, 0],
        [0, 1, 1],
        [1, 0, 1],
        [2, 0, 0],
        [0, 2, 0],
        [1, 1, 1],
        [3, 0, 0],
        [0, 2, 1],
        [0, 0, 3],
    ];
    let mut out: Vec<DictionaryEntry> = powers
        .iter()
        .enumerate()
        .map(|(k, p)| DictionaryEntry::PolynomialGradient { row: k % 3, powers: *p })
        .collect();
    let centers: [[f64; 3]; 12] = [
        [0.3, 0.3, 0.3],
        [0.7, 0.3, 0.3],
        [0.3, 0.7, 0.3],
        [0.7, 0.7, 0.3],
        [0.3, 0.3, 0.7],
        [0.7, 0.3, 0.7],
        [0.3, 0.7, 0.7],
        [0.7, 0.7, 0.7],
        [0.5, 0.5, 0.5],
        [0.5, 0.3, 0.7],
        [0.3, 0.5, 0.5],
        [0.5, 0.7, 0.4],
    ];
    for (k, c) in centers.iter().enumerate() {
        let matrix: [[f64; 3]; 3] =
            std::array::from_fn(|i| std::array::from_fn(|j| ((k * 9 + i * 3 + j) as f64 * 0.7 + 0.3).sin()));
        out.push(DictionaryEntry::Bump {
            center: *c,
            radius: 0.3,
            matrix,
        });
    }
    out
}

/// Smooth vector test functions for the momentum residual.
fn momentum_tests(mesh: &HexMesh) -> Vec<VectorField> {
    let o = mesh.origin();
    let s = mesh.size();
    let pi = std::f64::consts::PI;
    let fns: [fn([f64; 3], f64) -> [f64; 3]; 6] = [
        |x, _| [x[0] * x[1], 0.0, 0.0],
        |x, _| [0.0, x[2] * x[2], 0.0],
        |x, _| [0.0, 0.0, x[0] * x[1] * x[2]],
        |x, pi| [(pi * x[1]).sin(), (pi * x[2]).cos(), 0.0],
        |x, pi| [0.0, (pi * x[0]).sin() * x[2], (pi * x[1]).cos()],
        |x, _| [x[2].powi(3), x[0] * x[0], x[1]],
    ];
    fns.iter()
        .map(|f| VectorField::interpolate(mesh, |x| f(std::array::from_fn(|d| (x[d] - o[d]) / s[d]), pi)))
        .collect()
}

/// Pipeline parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncompatibleConfig {
    /// Measure mollification width in mesh spacings (at least 2).
    pub delta_cells: f64,
    pub schedule: MollificationSchedule,
    pub solver: SolverOptions,
    /// Number of dictionary entries used for the duality-identity check.
    pub duality_checks: usize,
}

impl Default for IncompatibleConfig {
    fn default() -> Self {
        Self {
            delta_cells: 4.0,
            schedule: MollificationSchedule::default(),
            solver: SolverOptions::default(),
            duality_checks: 2,
        }
    }
}

/// Mollified measure and its curl inverse, shared by solves with different
/// tensor fields on the same mesh.
#[derive(Debug, Clone)]
pub struct CurlData {
    pub measure: GridMeasure,
    pub edges: EdgeField,
    /// `β^μ` at the Gauss points.
    pub beta_mu: TensorField,
    pub total_variation: f64,
}

impl CurlData {
    /// Rasterizes `m` at width `delta` on the box around `mesh` and inverts
    /// the curl.
    pub fn new(mesh: &HexMesh, m: &LineMeasure, delta: f64) -> Result<Self> {
        if mesh.is_periodic() {
            return Err(Error::Config("the incompatible pipeline needs a bounded domain".into()));
        }
        m.validate(Some(mesh))?;
        let grid = PaddedGrid::around(mesh, delta);
        let measure = mollify(m, &grid, delta)?;
        let edges = solve_beta_mu(&measure)?;
        let beta_mu = edges.to_gauss(mesh);
        Ok(Self {
            measure,
            edges,
            beta_mu,
            total_variation: total_variation(m)?,
        })
    }

    /// Replaces `β^μ` by `β^μ + Dw`.
    pub fn with_gradient_shift(&self, mesh: &HexMesh, w: &VectorField) -> Self {
        Self {
            measure: self.measure.clone(),
            edges: self.edges.add_mesh_gradient(mesh, w),
            beta_mu: self.beta_mu.add(&w.gradient(mesh)),
            total_variation: self.total_variation,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IncompatibleSolution {
    pub beta: TensorField,
    pub u: VectorField,
    pub curl: CurlData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportNorms {
    pub beta_l3_2: f64,
    pub beta_mu_l3_2: f64,
    pub u_w1_3_2: f64,
    pub total_variation: f64,
    pub mollified_mass: f64,
    /// `β̄ᵃ`, row-major.
    pub mean_skew: [[f64; 3]; 3],
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportResiduals {
    /// `curl⁺β^μ − μ_δ` on the padded box, relative to `max |μ_δ|`.
    pub curl: f64,
    /// Same for `β^μ + grad u` on faces inside the mesh.
    pub curl_total: f64,
    pub divergence: f64,
    /// Element means of `Du` against edge differences of `u`.
    pub gradient_mismatch: f64,
    /// `max_φ |∫Cβ·Dφ| / (‖Cβ‖_{3/2}‖Dφ‖_3)` over smooth test fields.
    pub momentum: f64,
    pub measure_divergence: f64,
    pub measure_mean_correction: f64,
    pub rigid_mean: f64,
    pub rigid_skew: f64,
}

/// Outcome of one incompatible solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub norms: ReportNorms,
    pub residuals: ReportResiduals,
    pub duality_defects: Vec<f64>,
    /// `‖β − β̄ᵃ‖_{3/2} / |μ|(Ω)`; absent when `μ = 0`.
    pub estimate_ratio: Option<f64>,
    pub stages: Vec<StageRecord>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Full pipeline: mollify, invert the curl, solve the duality problem for
/// `F = Cβ^μ`, assemble `β = β^μ + Du`.
pub fn solve_incompatible(
    c: &ElasticTensorField,
    mesh: &HexMesh,
    m: &LineMeasure,
    cfg: &IncompatibleConfig,
) -> Result<(IncompatibleSolution, SolveReport)> {
    let h = mesh.spacing().iter().copied().fold(0.0, f64::max);
    let curl = CurlData::new(mesh, m, cfg.delta_cells * h)?;
    let solver = NeumannSolver::new(mesh, c, cfg.solver)?;
    solve_with_curl_data(&solver, c, &curl, cfg)
}

/// Stress of a Gauss-point strain under a cell-wise tensor field.
pub fn apply_field(c: &ElasticTensorField, beta: &TensorField) -> TensorField {
    let values = beta
        .values()
        .chunks(GAUSS_PER_ELEMENT)
        .enumerate()
        .flat_map(|(e, chunk)| {
            let t = c.tensor(e);
            chunk.iter().map(move |m| t.apply(m))
        })
        .collect();
    TensorField::from_values(values, beta.weight())
}

/// Pipeline after the curl inversion.
pub fn solve_with_curl_data(
    solver: &NeumannSolver,
    c: &ElasticTensorField,
    curl: &CurlData,
    cfg: &IncompatibleConfig,
) -> Result<(IncompatibleSolution, SolveReport)> {
    let mesh = solver.mesh().clone();
    let f = apply_field(c, &curl.beta_mu);
    let dual = solve_duality(solver, &f, &cfg.schedule)?;
    let u = dual.u;
    let du = u.gradient(&mesh);
    let beta = curl.beta_mu.add(&du);

    let mean_skew = skew(&beta.integral()) / mesh.volume();
    let estimate_ratio = (curl.total_variation > 0.0)
        .then(|| beta.map(|b| b - mean_skew).lp_norm(Exponent::ThreeHalves) / curl.total_variation);

    let stress = apply_field(c, &beta);
    let stress_norm = stress.lp_norm(Exponent::ThreeHalves);
    let momentum = momentum_tests(&mesh)
        .iter()
        .map(|phi| {
            let dphi = phi.gradient(&mesh);
            let scale = stress_norm * dphi.lp_norm(Exponent::Three);
            if scale == 0.0 {
                0.0
            } else {
                stress.inner(&dphi).abs() / scale
            }
        })
        .fold(0.0, f64::max);

    let dictionary = test_dictionary();
    let mut duality_defects = Vec::new();
    for entry in dictionary.iter().take(cfg.duality_checks) {
        let g = project_admissible(&entry.field(&mesh));
        let (v, _) = solver.solve(&g)?;
        duality_defects.push(duality_defect(&f, g.field(), &u, &v, &mesh));
    }

    let total_edges = curl.edges.add_mesh_gradient(&mesh, &u);
    let residuals = ReportResiduals {
        curl: curl.edges.curl_residual(&curl.measure, false),
        curl_total: total_edges.curl_residual(&curl.measure, true),
        divergence: curl.edges.div_residual(),
        gradient_mismatch: gradient_mismatch(&mesh, &u, &du),
        momentum,
        measure_divergence: crate::dislocation::check_divergence_free(&curl.measure),
        measure_mean_correction: curl.measure.mean_correction(),
        rigid_mean: u.integral(&mesh).iter().map(|v| v * v).sum::<f64>().sqrt(),
        rigid_skew: skew(&du.integral()).norm(),
    };
    let norms = ReportNorms {
        beta_l3_2: beta.lp_norm(Exponent::ThreeHalves),
        beta_mu_l3_2: curl.beta_mu.lp_norm(Exponent::ThreeHalves),
        u_w1_3_2: u.w1p_norm(&mesh, Exponent::ThreeHalves),
        total_variation: curl.total_variation,
        mollified_mass: curl.measure.mass(),
        mean_skew: std::array::from_fn(|i| std::array::from_fn(|j| mean_skew[(i, j)])),
        delta: curl.measure.delta(),
    };
    let report = SolveReport {
        schema_version: REPORT_SCHEMA_VERSION,
        norms,
        residuals,
        duality_defects,
        estimate_ratio,
        stages: dual.stages,
    };
    Ok((
        IncompatibleSolution {
            beta,
            u,
            curl: curl.clone(),
        },
        report,
    ))
}

/// `max_e ‖⨍_e Du − edge average‖ / max ‖Du‖`.
fn gradient_mismatch(mesh: &HexMesh, u: &VectorField, du: &TensorField) -> f64 {
    let means = du.element_means();
    let scale = du.values().iter().map(|m| m.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let h = mesh.spacing();
    let mut worst = 0.0f64;
    for (e, mean) in means.iter().enumerate() {
        let c = mesh.element_coords(e);
        let mut edge = Mat3::zeros();
        for j in 0..3 {
            let (k, l) = ((j + 1) % 3, (j + 2) % 3);
            for (ok, ol) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let mut a = c;
                a[k] += ok;
                a[l] += ol;
                let mut b = a;
                b[j] += 1;
                let (ua, ub) = (u.values()[mesh.node_index(a)], u.values()[mesh.node_index(b)]);
                for i in 0..3 {
                    edge[(i, j)] += 0.25 * (ub[i] - ua[i]) / h[j];
                }
            }
        }
        worst = worst.max((mean - edge).norm());
    }
    worst / scale
}

/// `min_K ‖β₂ − β₁ − K‖_{3/2}` over constant skew `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessResult {
    pub discrepancy: f64,
    /// Minimizing skew offset, row-major.
    pub offset: [[f64; 3]; 3],
    pub iterations: usize,
}

/// Minimizes the `L^{3/2}` distance modulo constant skew matrices by
/// iteratively reweighted least squares.
pub fn uniqueness_check(beta1: &TensorField, beta2: &TensorField) -> UniquenessResult {
    let d = beta2.sub(beta1);
    let mut k = d.mean_skew();
    let scale = d.max_abs().max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let mut num = Mat3::zeros();
        let mut den = 0.0;
        for m in d.values() {
            let r = (m - k).norm().max(1e-12 * scale);
            let w = r.powf(-0.5);
            num += m * w;
            den += w;
        }
        let next = skew(&(num / den));
        let change = (next - k).norm();
        k = next;
        if change <= 1e-14 * scale {
            break;
        }
    }
    let discrepancy = d.map(|m| m - k).lp_norm(Exponent::ThreeHalves);
    UniquenessResult {
        discrepancy,
        offset: std::array::from_fn(|i| std::array::from_fn(|j| k[(i, j)])),
        iterations,
    }
}

/// One resolution of a refinement study comparing two mollification widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementLevel {
    pub cells: usize,
    pub spacing: f64,
    pub delta_coarse: f64,
    pub delta_fine: f64,
    pub discrepancy: f64,
    pub relative_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementStudy {
    pub levels: Vec<RefinementLevel>,
    /// Discrepancy strictly decreasing along the refinement.
    pub decreasing: bool,
    /// Finest mesh and its strain for the coarse width.
    #[serde(skip)]
    pub finest: Option<(HexMesh, TensorField)>,
}

/// For each cube resolution, solves with `δ = coarse·h` and `δ = fine·h`
/// and measures their distance modulo constant skew matrices.
pub fn uniqueness_study(
    tensor: &crate::tensor::Tensor4,
    origin: [f64; 3],
    size: [f64; 3],
    resolutions: &[usize],
    m: &LineMeasure,
    cells_delta: (f64, f64),
    cfg: &IncompatibleConfig,
) -> Result<RefinementStudy> {
    let mut levels = Vec::new();
    let mut finest = None;
    for &n in resolutions {
        let mesh = HexMesh::new(origin, size, [n; 3])?;
        let c = ElasticTensorField::constant(&mesh, *tensor);
        let solver = NeumannSolver::new(&mesh, &c, cfg.solver)?;
        let h = mesh.spacing().iter().copied().fold(0.0, f64::max);
        let mut betas = Vec::new();
        for cells in [cells_delta.0, cells_delta.1] {
            let curl = CurlData::new(&mesh, m, cells * h)?;
            let (sol, _) = solve_with_curl_data(&solver, &c, &curl, &IncompatibleConfig { duality_checks: 0, ..*cfg })?;
            betas.push(sol.beta);
        }
        let r = uniqueness_check(&betas[0], &betas[1]);
        let norm = betas[0].lp_norm(Exponent::ThreeHalves);
        levels.push(RefinementLevel {
            cells: n,
            spacing: h,
            delta_coarse: cells_delta.0 * h,
            delta_fine: cells_delta.1 * h,
            discrepancy: r.discrepancy,
            relative_discrepancy: if norm > 0.0 { r.discrepancy / norm } else { 0.0 },
        });
        finest = Some((mesh, betas.swap_remove(0)));
    }
    let decreasing = levels.windows(2).all(|w| w[1].discrepancy < w[0].discrepancy);
    Ok(RefinementStudy {
        levels,
        decreasing,
        finest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn narrow_filter_is_identity() {
        let mesh = HexMesh::unit_cube(4);
        let f = GaussianFilter::new(&mesh, 0.01 * mesh.spacing()[0]);
        assert!(f.is_identity());
        let wide = GaussianFilter::new(&mesh, mesh.spacing()[0]);
        assert!(!wide.is_identity());
    }

    #[test]
    fn filter_preserves_constants() {
        let mesh = HexMesh::new([0.0; 3], [1.0, 2.0, 1.0], [4, 3, 5]).unwrap();
        let m = Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        let f = GaussianFilter::new(&mesh, 0.3).apply(&TensorField::constant(&mesh, m));
        assert!(f.values().iter().all(|v| (v - m).amax() < 1e-13));
    }

    #[test]
    fn dictionary_has_twenty_four_entries() {
        let d = test_dictionary();
        assert_eq!(d.len(), 24);
        let g = &d[3];
        // e_0 ⊗ ∇(x̂ŷ) at (0.5, 0.25) on a doubled box
        let m = g.eval([0.5, 0.25, 0.0], [2.0, 2.0, 2.0]);
        assert!((m[(0, 0)] - 0.125).abs() < 1e-15 && (m[(0, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn injected_skew_offset_is_recovered() {
        let mesh = HexMesh::unit_cube(3);
        let b1 = TensorField::from_fn(&mesh, |x| Mat3::new(x[0], x[1], 0.0, x[2] * x[2], 1.0, 0.0, 0.0, x[0] * x[1], 2.0));
        let k0 = Mat3::new(0.0, 0.5, -1.0, -0.5, 0.0, 0.25, 1.0, -0.25, 0.0);
        let r = uniqueness_check(&b1, &b1.map(|m| m + k0));
        assert!(r.discrepancy < 1e-14);
        let k = Mat3::from_fn(|i, j| r.offset[i][j]);
        assert!((k - k0).amax() < 1e-15);
    }
}
