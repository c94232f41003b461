//! Run configuration, the command driver and artifact writers.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dislocation::{mollify, require_divergence_free, total_variation, DislocationLoop, LineMeasure, PaddedGrid};
use crate::duality::{solve_incompatible, uniqueness_study, IncompatibleConfig};
use crate::error::{Error, ErrorClass, Result};
use crate::field::{TensorField, VectorField};
use crate::homogenization::{gconv_study, homogenize, GStudyConfig, UnitCell};
use crate::material::{vmo_modulus, ElasticTensorField, Microstructure};
use crate::mesh::HexMesh;
use crate::tensor::{Mat3, Tensor4};

/// JSON schema of the run configuration.
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsotropicParams {
    pub lambda: f64,
    pub mu: f64,
}

/// A single elasticity tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorSpec {
    Isotropic { isotropic: IsotropicParams },
    /// Full `a_ijhk` array, 81 entries in row-major index order.
    Components { components: Vec<f64> },
    /// Upper triangle of the engineering Voigt matrix, 21 entries.
    Voigt(Vec<f64>),
}

impl TensorSpec {
    pub fn build(&self) -> Result<Tensor4> {
        match self {
            TensorSpec::Isotropic { isotropic } => Ok(Tensor4::isotropic(isotropic.lambda, isotropic.mu)),
            TensorSpec::Voigt(v) => Tensor4::from_voigt_upper(v),
            TensorSpec::Components { components } => {
                if components.len() != 81 {
                    return Err(Error::Config("component tensor needs 81 entries".into()));
                }
                let a = std::array::from_fn(|i| {
                    std::array::from_fn(|j| std::array::from_fn(|k| std::array::from_fn(|l| components[27 * i + 9 * j + 3 * k + l])))
                });
                Tensor4::from_components(&a)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaminateSpec {
    pub axis: usize,
    pub fraction: f64,
    pub phases: [TensorSpec; 2],
    /// Period length in `Ω`; the reference cell is used as is for
    /// homogenization.
    #[serde(default = "unit")]
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerboardSpec {
    pub axes: [usize; 2],
    pub phases: [TensorSpec; 2],
    #[serde(default = "unit")]
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomVoxelSpec {
    pub blocks: [usize; 3],
    pub fraction: f64,
    pub phases: [TensorSpec; 2],
    #[serde(default = "unit")]
    pub period: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialSpec {
    Laminate { laminate: LaminateSpec },
    Checkerboard { checkerboard: CheckerboardSpec },
    RandomVoxels { random_voxels: RandomVoxelSpec },
    Constant(TensorSpec),
}

impl MaterialSpec {
    /// Cell microstructure and its period in `Ω`.
    pub fn microstructure(&self, seed: u64) -> Result<(Microstructure, f64)> {
        let pair = |p: &[TensorSpec; 2]| -> Result<[Tensor4; 2]> { Ok([p[0].build()?, p[1].build()?]) };
        let axis_ok = |a: usize| {
            if a < 3 {
                Ok(())
            } else {
                Err(Error::Config(format!("axis {a} out of range")))
            }
        };
        let fraction_ok = |f: f64| {
            if (0.0..=1.0).contains(&f) {
                Ok(())
            } else {
                Err(Error::Config("volume fraction must lie in [0, 1]".into()))
            }
        };
        let period_ok = |p: f64| {
            if p > 0.0 && p.is_finite() {
                Ok(p)
            } else {
                Err(Error::Config("period must be positive".into()))
            }
        };
        Ok(match self {
            MaterialSpec::Constant(t) => (Microstructure::Homogeneous(t.build()?), 1.0),
            MaterialSpec::Laminate { laminate: l } => {
                axis_ok(l.axis)?;
                fraction_ok(l.fraction)?;
                (
                    Microstructure::Laminate {
                        axis: l.axis,
                        fraction: l.fraction,
                        phases: pair(&l.phases)?,
                    },
                    period_ok(l.period)?,
                )
            }
            MaterialSpec::Checkerboard { checkerboard: c } => {
                axis_ok(c.axes[0])?;
                axis_ok(c.axes[1])?;
                if c.axes[0] == c.axes[1] {
                    return Err(Error::Config("checkerboard axes must differ".into()));
                }
                (
                    Microstructure::Checkerboard {
                        axes: c.axes,
                        phases: pair(&c.phases)?,
                    },
                    period_ok(c.period)?,
                )
            }
            MaterialSpec::RandomVoxels { random_voxels: r } => {
                fraction_ok(r.fraction)?;
                if r.blocks.contains(&0) {
                    return Err(Error::Config("voxel blocks must be positive".into()));
                }
                (
                    Microstructure::random_two_phase(r.blocks, r.fraction, pair(&r.phases)?, seed),
                    period_ok(r.period)?,
                )
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub origin: [f64; 3],
    pub size: [f64; 3],
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            size: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticityBounds {
    pub c0: f64,
    pub c1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomogenizationSpec {
    /// Periodic cell resolution; defaults to the domain resolution.
    pub cell_resolution: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GconvSpec {
    pub epsilons: Vec<f64>,
}

impl Default for GconvSpec {
    fn default() -> Self {
        Self {
            epsilons: vec![0.5, 0.25, 0.125],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySpec {
    /// Cube resolutions of the refinement sequence.
    pub resolutions: Vec<usize>,
    /// Two mollification widths in mesh spacings.
    pub delta_cells: [f64; 2],
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            resolutions: vec![8, 12, 16],
            delta_cells: [4.0, 3.0],
        }
    }
}

fn default_vmo_radii() -> Vec<f64> {
    vec![0.25, 0.125, 0.0625]
}

/// Complete description of a run. Every optional field is filled in the
/// resolved copy written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub domain: DomainSpec,
    pub resolution: [usize; 3],
    pub material: MaterialSpec,
    #[serde(default)]
    pub loops: Vec<DislocationLoop>,
    #[serde(default)]
    pub pipeline: IncompatibleConfig,
    #[serde(default)]
    pub ellipticity: Option<EllipticityBounds>,
    #[serde(default = "default_vmo_radii")]
    pub vmo_radii: Vec<f64>,
    #[serde(default)]
    pub homogenization: HomogenizationSpec,
    #[serde(default)]
    pub gconv: GconvSpec,
    #[serde(default)]
    pub study: StudySpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fills defaults that depend on other fields.
    pub fn resolve(mut self) -> Self {
        if self.homogenization.cell_resolution.is_none() {
            self.homogenization.cell_resolution = Some(self.resolution);
        }
        if self.output_dir.is_none() {
            self.output_dir = Some(PathBuf::from("out"));
        }
        if self.threads.is_none() {
            self.threads = Some(1);
        }
        self
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        if self.resolution.contains(&0) {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if self.pipeline.delta_cells < 2.0 {
            return Err(Error::Config("delta_cells must be at least 2".into()));
        }
        if !(self.pipeline.solver.rtol > 0.0) || self.pipeline.solver.max_iterations == 0 {
            return Err(Error::Config("solver needs a positive rtol and iteration cap".into()));
        }
        self.pipeline.schedule.validate()?;
        if self.vmo_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("VMO radii must be positive".into()));
        }
        if self.gconv.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("epsilons must be positive".into()));
        }
        if self.study.resolutions.is_empty() || self.study.resolutions.contains(&0) {
            return Err(Error::Config("study resolutions must be positive".into()));
        }
        if let Some(0) = self.threads {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<HexMesh> {
        HexMesh::new(self.domain.origin, self.domain.size, self.resolution)
    }

    pub fn tensor_field(&self, mesh: &HexMesh) -> Result<ElasticTensorField> {
        let (micro, period) = self.material.microstructure(self.seed)?;
        Ok(ElasticTensorField::periodic_sampled(mesh, &micro, period))
    }

    pub fn measure(&self) -> LineMeasure {
        LineMeasure::new(self.loops.clone())
    }
}

/// serde_json formatter printing every float with 17 significant digits.
struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Deterministic JSON encoding used for every report.
pub fn to_report_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

/// Array attached to a structured-points dataset.
pub enum VtkArray<'a> {
    Scalars(&'a [f64]),
    Vectors(&'a [[f64; 3]]),
    Tensors(&'a [Mat3]),
}

/// Legacy VTK structured-points file with big-endian binary payloads.
pub fn write_vtk(
    path: &Path,
    title: &str,
    origin: [f64; 3],
    spacing: [f64; 3],
    point_dims: [usize; 3],
    point_data: &[(&str, VtkArray)],
    cell_data: &[(&str, VtkArray)],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    writeln!(buf, "# vtk DataFile Version 3.0")?;
    writeln!(buf, "{}", title.replace('\n', " "))?;
    writeln!(buf, "BINARY")?;
    writeln!(buf, "DATASET STRUCTURED_POINTS")?;
    writeln!(buf, "DIMENSIONS {} {} {}", point_dims[0], point_dims[1], point_dims[2])?;
    writeln!(buf, "ORIGIN {:.16e} {:.16e} {:.16e}", origin[0], origin[1], origin[2])?;
    writeln!(buf, "SPACING {:.16e} {:.16e} {:.16e}", spacing[0], spacing[1], spacing[2])?;
    let n_points: usize = point_dims.iter().product();
    let n_cells: usize = point_dims.iter().map(|d| d.saturating_sub(1).max(1)).product();
    for (header, count, arrays) in [("CELL_DATA", n_cells, cell_data), ("POINT_DATA", n_points, point_data)] {
        if arrays.is_empty() {
            continue;
        }
        writeln!(buf, "{header} {count}")?;
        for (name, array) in arrays {
            let values: Vec<f64> = match array {
                VtkArray::Scalars(v) => {
                    writeln!(buf, "SCALARS {name} double 1")?;
                    writeln!(buf, "LOOKUP_TABLE default")?;
                    v.to_vec()
                }
                VtkArray::Vectors(v) => {
                    writeln!(buf, "VECTORS {name} double")?;
                    v.iter().flatten().copied().collect()
                }
                VtkArray::Tensors(v) => {
                    writeln!(buf, "TENSORS {name} double")?;
                    v.iter().flat_map(|m| (0..3).flat_map(move |i| (0..3).map(move |j| m[(i, j)]))).collect()
                }
            };
            let per = match array {
                VtkArray::Scalars(_) => 1,
                VtkArray::Vectors(_) => 3,
                VtkArray::Tensors(_) => 9,
            };
            if values.len() != per * count {
                return Err(Error::DimensionMismatch(format!("VTK array {name} has the wrong length")));
            }
            for v in values {
                buf.extend_from_slice(&v.to_be_bytes());
            }
            buf.push(b'\n');
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Element means of a Gauss-point field as cell tensors, plus nodal vectors.
pub fn write_mesh_fields(
    path: &Path,
    mesh: &HexMesh,
    tensors: &[(&str, &TensorField)],
    vectors: &[(&str, &VectorField)],
) -> Result<()> {
    let means: Vec<Vec<Mat3>> = tensors.iter().map(|(_, f)| f.element_means()).collect();
    let cell: Vec<(&str, VtkArray)> = tensors
        .iter()
        .zip(&means)
        .map(|((name, _), m)| (*name, VtkArray::Tensors(m)))
        .collect();
    let point: Vec<(&str, VtkArray)> = vectors
        .iter()
        .map(|(name, v)| (*name, VtkArray::Vectors(v.values())))
        .collect();
    write_vtk(path, "incompat", mesh.origin(), mesh.spacing(), mesh.node_dims(), &point, &cell)
}

/// A named check with its measured value and threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl InvariantCheck {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value.is_finite() && value <= threshold,
        }
    }

    fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
            passed: ok,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunReport<T: Serialize> {
    schema_version: u32,
    command: &'static str,
    passed: bool,
    invariants: Vec<InvariantCheck>,
    result: T,
}

#[derive(Debug, Serialize)]
struct ErrorReport {
    error: &'static str,
    class: &'static str,
    exit_code: i32,
    message: String,
    loop_index: Option<usize>,
}

#[derive(Parser, Debug)]
#[command(name = "incompat", about = "Traction-free elasticity with dislocation loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the configuration.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the configuration, the measure and the material.
    Check(CommonArgs),
    /// Solve for the incompatible strain.
    Solve(CommonArgs),
    /// Effective tensor of the periodic material and its bounds.
    Homogenize(CommonArgs),
    /// G-convergence study over the configured epsilons.
    Gconv(CommonArgs),
    /// Refinement study of the mollification dependence.
    Study(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Check(a) | Command::Solve(a) | Command::Homogenize(a) | Command::Gconv(a) | Command::Study(a) => a,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Check(_) => "check",
            Command::Solve(_) => "solve",
            Command::Homogenize(_) => "homogenize",
            Command::Gconv(_) => "gconv",
            Command::Study(_) => "study",
        }
    }
}

fn init_logging() {
    let level = match std::env::var("INCOMPAT_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Error,
    };
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();
}

fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Invariant => 2,
        ErrorClass::Solver => 3,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Invariant => "invariant",
        ErrorClass::Solver => "solver",
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 configuration error, 2 invariant
/// violation, 3 solver failure.
pub fn run_command<S: AsRef<str>>(argv: &[S]) -> i32 {
    init_logging();
    let cli = match Cli::try_parse_from(argv.iter().map(|s| s.as_ref())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let args = cli.command.args();
    let mut out_dir = args.out.clone();
    let result = (|| -> Result<Vec<InvariantCheck>> {
        let mut cfg = RunConfig::load(&args.config)?;
        if let Some(o) = &args.out {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(t) = args.threads {
            cfg.threads = Some(t);
        }
        let cfg = cfg.resolve();
        cfg.validate()?;
        let dir = cfg.output_dir.clone().expect("resolved");
        out_dir = Some(dir.clone());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("resolved_config.json"), to_report_json(&cfg)?)?;
        let threads = cfg.threads.expect("resolved");
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        let start = Instant::now();
        let checks = match &cli.command {
            Command::Check(_) => run_check(&cfg, &dir),
            Command::Solve(_) => run_solve(&cfg, &dir),
            Command::Homogenize(_) => run_homogenize(&cfg, &dir),
            Command::Gconv(_) => run_gconv(&cfg, &dir),
            Command::Study(_) => run_study(&cfg, &dir),
        }?;
        let timing = serde_json::json!({ "command": cli.command.name(), "seconds": start.elapsed().as_secs_f64() });
        fs::write(dir.join("timing.json"), serde_json::to_vec_pretty(&timing)?)?;
        Ok(checks)
    })();
    match result {
        Ok(checks) => {
            if let Some(failed) = checks.iter().find(|c| !c.passed) {
                let err = ErrorReport {
                    error: "InvariantViolation",
                    class: "invariant",
                    exit_code: 2,
                    message: format!("{} = {:e} exceeds {:e}", failed.name, failed.value, failed.threshold),
                    loop_index: None,
                };
                emit_error(out_dir.as_deref(), &err);
                2
            } else {
                0
            }
        }
        Err(e) => {
            let class = e.class();
            let err = ErrorReport {
                error: e.kind(),
                class: class_name(class),
                exit_code: exit_code(class),
                message: e.to_string(),
                loop_index: e.loop_index(),
            };
            emit_error(out_dir.as_deref(), &err);
            err.exit_code
        }
    }
}

fn emit_error(dir: Option<&Path>, err: &ErrorReport) {
    let text = serde_json::to_string(err).unwrap_or_else(|_| "{}".into());
    eprintln!("{text}");
    if let Some(d) = dir {
        if fs::create_dir_all(d).is_ok() {
            let _ = fs::write(d.join("error.json"), format!("{text}\n"));
        }
    }
}

fn write_report<T: Serialize>(dir: &Path, file: &str, command: &'static str, checks: &[InvariantCheck], result: T) -> Result<()> {
    let report = RunReport {
        schema_version: 1,
        command,
        passed: checks.iter().all(|c| c.passed),
        invariants: checks.to_vec(),
        result,
    };
    fs::write(dir.join(file), to_report_json(&report)?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct CheckResult {
    ellipticity_min: f64,
    ellipticity_max: f64,
    declared_bounds: Option<EllipticityBounds>,
    total_variation: f64,
    mollified_mass: f64,
    delta: f64,
    divergence_residual: f64,
    mean_correction: f64,
    vmo: crate::material::VmoReport,
}

fn run_check(cfg: &RunConfig, dir: &Path) -> Result<Vec<InvariantCheck>> {
    let mesh = cfg.mesh()?;
    let c = cfg.tensor_field(&mesh)?;
    let m = cfg.measure();
    m.validate(Some(&mesh))?;
    let (lo, hi) = c.require_elliptic()?;
    let mut checks = Vec::new();
    if let Some(b) = cfg.ellipticity {
        let r = c.check_ellipticity(b.c0, b.c1)?;
        if !r.passes {
            return Err(Error::NotElliptic {
                min: r.min_relative,
                max: r.max_relative,
                c0: b.c0,
                c1: b.c1,
            });
        }
    }
    let h = mesh.spacing().iter().copied().fold(0.0, f64::max);
    let delta = cfg.pipeline.delta_cells * h;
    let grid = PaddedGrid::around(&mesh, delta);
    let mu = mollify(&m, &grid, delta)?;
    let residual = require_divergence_free(&mu, 1e-10)?;
    mu.check_means(1e-12)?;
    checks.push(InvariantCheck::at_most("measure_divergence", residual, 1e-10));
    checks.push(InvariantCheck::at_most("measure_mean_correction", mu.mean_correction(), 1e-12));
    let vmo = vmo_modulus(&c, &mesh, &cfg.vmo_radii)?;
    let phase: Vec<f64> = c.ids().iter().map(|&i| i as f64).collect();
    write_vtk(
        &dir.join("material.vtk"),
        "phase",
        mesh.origin(),
        mesh.spacing(),
        mesh.node_dims(),
        &[],
        &[("phase", VtkArray::Scalars(&phase))],
    )?;
    mu.write(dir, "mu_delta")?;
    let result = CheckResult {
        ellipticity_min: lo,
        ellipticity_max: hi,
        declared_bounds: cfg.ellipticity,
        total_variation: total_variation(&m)?,
        mollified_mass: mu.mass(),
        delta,
        divergence_residual: residual,
        mean_correction: mu.mean_correction(),
        vmo,
    };
    write_report(dir, "report.json", "check", &checks, result)?;
    Ok(checks)
}

fn run_solve(cfg: &RunConfig, dir: &Path) -> Result<Vec<InvariantCheck>> {
    let mesh = cfg.mesh()?;
    let c = cfg.tensor_field(&mesh)?;
    if let Some(b) = cfg.ellipticity {
        let r = c.check_ellipticity(b.c0, b.c1)?;
        if !r.passes {
            return Err(Error::NotElliptic {
                min: r.min_relative,
                max: r.max_relative,
                c0: b.c0,
                c1: b.c1,
            });
        }
    }
    let m = cfg.measure();
    let (sol, report) = solve_incompatible(&c, &mesh, &m, &cfg.pipeline)?;
    let r = &report.residuals;
    let mut checks = vec![
        InvariantCheck::at_most("rigid_mean", r.rigid_mean, 1e-10),
        InvariantCheck::at_most("rigid_skew", r.rigid_skew, 1e-10),
        InvariantCheck::at_most("curl_residual", r.curl, 1e-10),
        InvariantCheck::at_most("divergence_residual", r.divergence, 1e-10),
        InvariantCheck::at_most("measure_divergence", r.measure_divergence, 1e-10),
        InvariantCheck::at_most("curl_total_residual", r.curl_total, 1e-6),
        InvariantCheck::at_most("gradient_mismatch", r.gradient_mismatch, 1e-6),
        InvariantCheck::at_most("momentum_residual", r.momentum, 1e-6),
        InvariantCheck::flag("beta_finite", sol.beta.is_finite()),
    ];
    for (k, d) in report.duality_defects.iter().enumerate() {
        checks.push(InvariantCheck::at_most(&format!("duality_defect_{k}"), *d, 1e-8));
    }
    write_mesh_fields(
        &dir.join("fields.vtk"),
        &mesh,
        &[("beta", &sol.beta), ("beta_mu", &sol.curl.beta_mu)],
        &[("u", &sol.u)],
    )?;
    sol.curl.measure.write(dir, "mu_delta")?;
    write_report(dir, "report.json", "solve", &checks, &report)?;
    Ok(checks)
}

#[derive(Debug, Serialize)]
struct HomogenizeResult<'a> {
    effective_tensor: &'a crate::homogenization::EffectiveTensor,
    bounds: &'a crate::homogenization::BoundCertificate,
    corrector_means: Vec<[f64; 3]>,
    iterations: Vec<usize>,
}

fn run_homogenize(cfg: &RunConfig, dir: &Path) -> Result<Vec<InvariantCheck>> {
    let (micro, _) = cfg.material.microstructure(cfg.seed)?;
    let cell = UnitCell::new(&micro, cfg.homogenization.cell_resolution.expect("resolved"))?;
    let (eff, bounds, corr) = homogenize(&cell, &cfg.pipeline.solver)?;
    let means: Vec<[f64; 3]> = corr.chi.iter().map(|u| u.integral(cell.mesh())).collect();
    let worst_mean = means.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = eff.tensor.mandel().amax().max(f64::MIN_POSITIVE);
    let checks = vec![
        InvariantCheck::at_most("effective_asymmetry", eff.asymmetry / scale, 1e-12),
        InvariantCheck::flag("effective_elliptic", eff.ellipticity.passes),
        InvariantCheck::flag("voigt_reuss", bounds.passes),
        InvariantCheck::at_most("corrector_mean", worst_mean, 1e-12),
    ];
    let vectors: Vec<(String, &VectorField)> = corr.chi.iter().enumerate().map(|(p, u)| (format!("chi_{p}"), u)).collect();
    let named: Vec<(&str, &VectorField)> = vectors.iter().map(|(n, u)| (n.as_str(), *u)).collect();
    write_mesh_fields(&dir.join("correctors.vtk"), cell.mesh(), &[], &named)?;
    fs::write(
        dir.join("effective_tensor.json"),
        to_report_json(&serde_json::json!({ "voigt_upper": eff.voigt_upper }))?,
    )?;
    let result = HomogenizeResult {
        effective_tensor: &eff,
        bounds: &bounds,
        corrector_means: means,
        iterations: corr.stats.iter().map(|s| s.iterations).collect(),
    };
    write_report(dir, "report.json", "homogenize", &checks, result)?;
    Ok(checks)
}

fn run_gconv(cfg: &RunConfig, dir: &Path) -> Result<Vec<InvariantCheck>> {
    let mesh = cfg.mesh()?;
    let (micro, _) = cfg.material.microstructure(cfg.seed)?;
    let study = GStudyConfig {
        epsilons: cfg.gconv.epsilons.clone(),
        cell_resolution: cfg.homogenization.cell_resolution.expect("resolved"),
        pipeline: cfg.pipeline,
        vmo_radii: cfg.vmo_radii.clone(),
    };
    let out = gconv_study(&micro, &mesh, &cfg.measure(), &study)?;
    let checks = vec![
        InvariantCheck::flag("trend_decreasing", out.report.trend_decreasing),
        InvariantCheck::flag("voigt_reuss", out.report.bounds.passes),
    ];
    let mut tensors: Vec<(String, &TensorField)> = vec![("beta_homogenized".into(), &out.beta_homogenized)];
    for (eps, b) in cfg.gconv.epsilons.iter().zip(&out.beta_eps) {
        tensors.push((format!("beta_eps_{eps}"), b));
    }
    let named: Vec<(&str, &TensorField)> = tensors.iter().map(|(n, f)| (n.as_str(), *f)).collect();
    write_mesh_fields(&dir.join("fields.vtk"), &mesh, &named, &[])?;
    write_report(dir, "gconv_report.json", "gconv", &checks, &out.report)?;
    write_report(dir, "report.json", "gconv", &checks, &out.report)?;
    Ok(checks)
}

fn run_study(cfg: &RunConfig, dir: &Path) -> Result<Vec<InvariantCheck>> {
    let (micro, _) = cfg.material.microstructure(cfg.seed)?;
    let Microstructure::Homogeneous(tensor) = micro else {
        return Err(Error::Config("the refinement study needs a constant material".into()));
    };
    let study = uniqueness_study(
        &tensor,
        cfg.domain.origin,
        cfg.domain.size,
        &cfg.study.resolutions,
        &cfg.measure(),
        (cfg.study.delta_cells[0], cfg.study.delta_cells[1]),
        &cfg.pipeline,
    )?;
    let checks = vec![InvariantCheck::flag("discrepancy_decreasing", study.decreasing)];
    if let Some((mesh, beta)) = &study.finest {
        write_mesh_fields(&dir.join("fields.vtk"), mesh, &[("beta", beta)], &[])?;
    }
    write_report(dir, "report.json", "study", &checks, &study)?;
    Ok(checks)
}
