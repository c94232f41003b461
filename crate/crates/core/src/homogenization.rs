//! Periodic cell problems, the effective tensor, Voigt–Reuss bounds and the
//! G-convergence study for `C(x/ε)`.

use nalgebra::{Matrix6, SymmetricEigen};
use serde::Serialize;

use crate::duality::{
    solve_with_curl_data, test_dictionary, CurlData, DictionaryEntry, IncompatibleConfig, SolveReport,
};
use crate::error::{Error, Result};
use crate::fem::{AdmissibleForcing, NeumannSolver, SolveStats, SolverOptions};
use crate::field::{Exponent, TensorField, VectorField};
use crate::material::{vmo_modulus, ElasticTensorField, Microstructure, VmoReport};
use crate::mesh::HexMesh;
use crate::tensor::{mandel_basis, relative_eigenvalues, EllipticityReport, Tensor4};
use crate::dislocation::LineMeasure;

/// Absolute tolerance on the Voigt–Reuss eigenvalue gaps.
pub const BOUND_TOL: f64 = 1e-10;

/// Reference cell `Y = [0, 1]³` with a periodic mesh and the cell tensor
/// sampled at element centers.
#[derive(Debug, Clone)]
pub struct UnitCell {
    mesh: HexMesh,
    field: ElasticTensorField,
}

impl UnitCell {
    pub fn new(micro: &Microstructure, cells: [usize; 3]) -> Result<Self> {
        let mesh = HexMesh::periodic_cell(cells)?;
        let field = ElasticTensorField::periodic_sampled(&mesh, micro, 1.0);
        Ok(Self { mesh, field })
    }

    pub fn from_field(mesh: HexMesh, field: ElasticTensorField) -> Result<Self> {
        if !mesh.is_periodic() {
            return Err(Error::Config("unit cell mesh must be periodic".into()));
        }
        field.check_mesh(&mesh)?;
        Ok(Self { mesh, field })
    }

    pub fn mesh(&self) -> &HexMesh {
        &self.mesh
    }

    pub fn field(&self) -> &ElasticTensorField {
        &self.field
    }
}

/// Periodic zero-mean correctors for the six orthonormal symmetric strains.
#[derive(Debug, Clone)]
pub struct Correctors {
    pub chi: Vec<VectorField>,
    pub stats: Vec<SolveStats>,
}

fn strain_forcing(cell: &UnitCell, e: &crate::tensor::Mat3) -> TensorField {
    let mesh = &cell.mesh;
    let values = (0..mesh.n_elements())
        .flat_map(|el| {
            let s = cell.field.tensor(el).apply(e);
            std::iter::repeat(s).take(crate::mesh::GAUSS_PER_ELEMENT)
        })
        .collect();
    TensorField::from_values(values, mesh.gauss_weight())
}

/// Solves `∫_Y C(E_p + Dχ_p)·Dφ = 0` for every periodic `φ`, `p = 0..6`.
pub fn cell_correctors(cell: &UnitCell, opts: &SolverOptions) -> Result<Correctors> {
    let solver = NeumannSolver::new(&cell.mesh, &cell.field, *opts)?;
    let mut chi = Vec::with_capacity(6);
    let mut stats = Vec::with_capacity(6);
    for p in 0..6 {
        let f = strain_forcing(cell, &mandel_basis(p));
        let (u, s) = solver.solve(&AdmissibleForcing::try_new(f)?)?;
        chi.push(u);
        stats.push(s);
    }
    Ok(Correctors { chi, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveTensor {
    #[serde(skip)]
    pub tensor: Tensor4,
    /// Upper triangle in engineering Voigt order, 21 coefficients.
    pub voigt_upper: Vec<f64>,
    /// `ĈE_p·E_p` for the six basis strains.
    pub corrector_energies: [f64; 6],
    /// Largest `|Ĉ_pq − Ĉ_qp|` before symmetrization.
    pub asymmetry: f64,
    pub ellipticity: EllipticityReport,
}

/// `Ĉ_pq = ∫_Y C(E_p + Dχ_p)·(E_q + Dχ_q)`.
pub fn effective_tensor(cell: &UnitCell, correctors: &Correctors) -> Result<EffectiveTensor> {
    if correctors.chi.len() != 6 {
        return Err(Error::DimensionMismatch("six correctors expected".into()));
    }
    let mesh = &cell.mesh;
    let strains: Vec<TensorField> = (0..6)
        .map(|p| {
            let e = mandel_basis(p);
            correctors.chi[p].gradient(mesh).map(|d| d + e)
        })
        .collect();
    let stresses: Vec<TensorField> = strains.iter().map(|s| crate::duality::apply_field(&cell.field, s)).collect();
    let raw = Matrix6::from_fn(|p, q| stresses[p].inner(&strains[q]));
    let asymmetry = (raw - raw.transpose()).amax();
    let tensor = Tensor4::from_mandel((raw + raw.transpose()) * 0.5);
    let (lo, hi) = cell.field.ellipticity_bounds();
    let ellipticity = crate::tensor::check_ellipticity(&tensor, lo, hi)?;
    Ok(EffectiveTensor {
        voigt_upper: tensor.to_voigt_upper(),
        corrector_energies: std::array::from_fn(|p| raw[(p, p)]),
        asymmetry,
        ellipticity,
        tensor,
    })
}

/// Smallest eigenvalues of `⟨C⟩ − Ĉ` and `Ĉ − ⟨C⁻¹⟩⁻¹` with eigenvectors in
/// Mandel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub upper_gap: f64,
    pub upper_eigenvector: [f64; 6],
    pub lower_gap: f64,
    pub lower_eigenvector: [f64; 6],
    /// All six eigenvalues of `Ĉ − ⟨C⁻¹⟩⁻¹`, ascending.
    pub lower_spectrum: [f64; 6],
    pub passes: bool,
}

fn min_eig(m: &Matrix6<f64>) -> (f64, [f64; 6], [f64; 6]) {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let i = order[0];
    (
        eig.eigenvalues[i],
        std::array::from_fn(|k| eig.eigenvectors[(k, i)]),
        std::array::from_fn(|k| eig.eigenvalues[order[k]]),
    )
}

/// Checks `⟨C⁻¹⟩⁻¹ ≤ Ĉ ≤ ⟨C⟩` as quadratic forms on symmetric matrices.
pub fn voigt_reuss_check(eff: &EffectiveTensor, cell: &UnitCell) -> Result<BoundCertificate> {
    let voigt = cell.field.mean();
    let reuss = cell
        .field
        .harmonic_mean()
        .ok_or_else(|| Error::Config("cell tensor is not invertible on symmetric matrices".into()))?;
    let (upper_gap, upper_eigenvector, _) = min_eig(&(voigt.mandel() - eff.tensor.mandel()));
    let (lower_gap, lower_eigenvector, lower_spectrum) = min_eig(&(eff.tensor.mandel() - reuss.mandel()));
    if upper_gap < -BOUND_TOL {
        return Err(Error::BoundViolation {
            bound: "voigt",
            eigenvalue: upper_gap,
            eigenvector: upper_eigenvector,
        });
    }
    if lower_gap < -BOUND_TOL {
        return Err(Error::BoundViolation {
            bound: "reuss",
            eigenvalue: lower_gap,
            eigenvector: lower_eigenvector,
        });
    }
    Ok(BoundCertificate {
        upper_gap,
        upper_eigenvector,
        lower_gap,
        lower_eigenvector,
        lower_spectrum,
        passes: true,
    })
}

/// Correctors, `Ĉ` and its bound certificate in one call.
pub fn homogenize(cell: &UnitCell, opts: &SolverOptions) -> Result<(EffectiveTensor, BoundCertificate, Correctors)> {
    let correctors = cell_correctors(cell, opts)?;
    let eff = effective_tensor(cell, &correctors)?;
    let cert = voigt_reuss_check(&eff, cell)?;
    Ok((eff, cert, correctors))
}

/// Parameters of a G-convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct GStudyConfig {
    pub epsilons: Vec<f64>,
    /// Resolution of the periodic cell used for `Ĉ`.
    pub cell_resolution: [usize; 3],
    pub pipeline: IncompatibleConfig,
    /// Radii for the VMO diagnostic of each `C_ε`.
    pub vmo_radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GStudyLevel {
    pub epsilon: f64,
    pub cells_per_period: f64,
    /// `|∫G·(β_ε − β₀)|` for every dictionary entry.
    pub d_g: Vec<f64>,
    pub max_d_g: f64,
    /// `‖β_ε − β₀‖_{3/2}`.
    pub strong_distance: f64,
    pub relative_strong_distance: f64,
    pub vmo: VmoReport,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GStudyReport {
    pub epsilons: Vec<f64>,
    pub dictionary: Vec<DictionaryEntry>,
    pub effective_tensor: EffectiveTensor,
    pub bounds: BoundCertificate,
    pub homogenized: SolveReport,
    pub levels: Vec<GStudyLevel>,
    /// `max_G d_G` ends below its start with at most one increase.
    pub trend_decreasing: bool,
}

/// Study report with the strain fields behind it.
#[derive(Debug, Clone)]
pub struct GStudyOutput {
    pub report: GStudyReport,
    pub beta_homogenized: TensorField,
    /// One strain per `ε`, in the configured order.
    pub beta_eps: Vec<TensorField>,
}

/// Decrease from first to last with at most one increase in between.
pub fn trend_decreasing(values: &[f64]) -> bool {
    let increases = values.windows(2).filter(|w| w[1] > w[0]).count();
    values.len() >= 2 && increases <= 1 && values[values.len() - 1] < values[0]
}

/// Runs the incompatible pipeline for `C_Y(x/ε)` at each `ε` and once for
/// the homogenized tensor, and compares the strains weakly and strongly.
pub fn gconv_study(micro: &Microstructure, mesh: &HexMesh, m: &LineMeasure, cfg: &GStudyConfig) -> Result<GStudyOutput> {
    let cell = UnitCell::new(micro, cfg.cell_resolution)?;
    let (eff, bounds, _) = homogenize(&cell, &cfg.pipeline.solver)?;
    let h = mesh.spacing().iter().copied().fold(0.0, f64::max);
    let curl = CurlData::new(mesh, m, cfg.pipeline.delta_cells * h)?;
    let dictionary = test_dictionary();
    let g_fields: Vec<TensorField> = dictionary.iter().map(|g| g.field(mesh)).collect();

    let c0 = ElasticTensorField::constant(mesh, eff.tensor);
    let solver0 = NeumannSolver::new(mesh, &c0, cfg.pipeline.solver)?;
    let (sol0, homogenized) = solve_with_curl_data(&solver0, &c0, &curl, &cfg.pipeline)?;
    let beta0 = sol0.beta;
    let norm0 = beta0.lp_norm(Exponent::ThreeHalves);

    let mut levels = Vec::new();
    let mut beta_eps = Vec::new();
    for &eps in &cfg.epsilons {
        let cells_per_period: Vec<f64> = (0..3).map(|d| eps / mesh.spacing()[d]).collect();
        let periods: Vec<f64> = (0..3).map(|d| mesh.size()[d] / eps).collect();
        let integral = |v: f64| (v - v.round()).abs() < 1e-9 && v.round() >= 1.0;
        if !(eps > 0.0) || !cells_per_period.iter().chain(&periods).all(|&v| integral(v)) {
            return Err(Error::Config(format!("epsilon {eps} is not commensurate with the mesh")));
        }
        let c_eps = ElasticTensorField::periodic_sampled(mesh, micro, eps);
        let solver = NeumannSolver::new(mesh, &c_eps, cfg.pipeline.solver)?;
        let (sol, report) = solve_with_curl_data(&solver, &c_eps, &curl, &cfg.pipeline)?;
        let diff = sol.beta.sub(&beta0);
        let d_g: Vec<f64> = g_fields.iter().map(|g| g.inner(&diff).abs()).collect();
        let strong = diff.lp_norm(Exponent::ThreeHalves);
        let vmo = vmo_modulus(&c_eps, mesh, &cfg.vmo_radii)?;
        log::info!("gconv: epsilon {eps}, max d_G {:e}, strong {strong:e}", d_g.iter().copied().fold(0.0, f64::max));
        levels.push(GStudyLevel {
            epsilon: eps,
            cells_per_period: cells_per_period[0],
            max_d_g: d_g.iter().copied().fold(0.0, f64::max),
            d_g,
            strong_distance: strong,
            relative_strong_distance: if norm0 > 0.0 { strong / norm0 } else { 0.0 },
            vmo,
            report,
        });
        beta_eps.push(sol.beta);
    }
    let maxima: Vec<f64> = levels.iter().map(|l| l.max_d_g).collect();
    let all_zero = maxima.iter().all(|v| *v == 0.0);
    let report = GStudyReport {
        epsilons: cfg.epsilons.clone(),
        dictionary,
        effective_tensor: eff,
        bounds,
        homogenized,
        trend_decreasing: all_zero || trend_decreasing(&maxima),
        levels,
    };
    Ok(GStudyOutput {
        report,
        beta_homogenized: beta0,
        beta_eps,
    })
}

/// Extremal relative eigenvalues over the phases of a microstructure.
pub fn phase_envelope(micro: &Microstructure) -> (f64, f64) {
    micro.phases().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let ev = relative_eigenvalues(c);
        (lo.min(ev[0]), hi.max(ev[5]))
    })
}
