use incompat::dislocation::{DislocationLoop, LineMeasure};
use incompat::duality::{
    apply_field, solve_duality, solve_incompatible, solve_with_curl_data, test_dictionary, uniqueness_check,
    uniqueness_study, verify_duality_identity, verify_duality_pairs, CurlData, IncompatibleConfig,
    MollificationSchedule,
};
use incompat::fem::{project_admissible, NeumannSolver, SolverOptions};
use incompat::material::ElasticTensorField;
use incompat::tensor::skew;
use incompat::{Exponent, HexMesh, Mat3, Tensor4, TensorField, VectorField};

fn aniso() -> Tensor4 {
    Tensor4::from_voigt_upper(&[
        4.0, 1.2, 0.9, 0.1, 0.0, 0.2, //
        3.5, 1.1, 0.0, -0.1, 0.0, //
        3.0, 0.0, 0.0, 0.1, //
        1.1, 0.05, 0.0, //
        1.0, 0.0, //
        1.3,
    ])
    .unwrap()
}

fn square() -> DislocationLoop {
    DislocationLoop::square([0.5, 0.5, 0.5], 0.4, [0, 1], [1.0, 0.0, 0.0])
}

fn max_diff(a: &TensorField, b: &TensorField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

fn gauge_free(beta: &TensorField) -> TensorField {
    let k = skew(&beta.integral()) / beta.measure();
    beta.map(|b| b - k)
}

#[test]
fn duality_identity_holds_for_dictionary_pairs() {
    let mesh = HexMesh::unit_cube(16);
    let c = ElasticTensorField::from_fn(&mesh, |x| if x[2] < 0.5 { aniso() } else { Tensor4::isotropic(1.0, 2.0) });
    let solver = NeumannSolver::new(&mesh, &c, SolverOptions::default()).unwrap();
    let dict = test_dictionary();
    let fs: Vec<TensorField> = [1, 6, 14, 21].iter().map(|&i| dict[i].field(&mesh)).collect();
    let gs: Vec<TensorField> = [3, 10, 18].iter().map(|&i| dict[i].field(&mesh)).collect();
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
    let defects = verify_duality_pairs(&solver, &fs, &gs, &pairs, &MollificationSchedule::default()).unwrap();
    assert_eq!(defects.len(), 12);
    assert!(defects.iter().all(|d| *d < 1e-8), "{defects:?}");
}

#[test]
fn smooth_forcing_terminates_at_second_stage() {
    let mesh = HexMesh::unit_cube(8);
    let c = ElasticTensorField::constant(&mesh, aniso());
    let solver = NeumannSolver::new(&mesh, &c, SolverOptions::default()).unwrap();
    let f = TensorField::from_fn(&mesh, |x| Mat3::new(x[0] * x[1], 0.0, 1.0, x[2], 0.5, 0.0, 0.0, x[0], -x[1]));
    let schedule = MollificationSchedule {
        first_width_cells: 1.0 / 16.0,
        ..Default::default()
    };
    let sol = solve_duality(&solver, &f, &schedule).unwrap();
    assert_eq!(sol.stages.len(), 2);
    assert!(sol.stages[1].defect.unwrap() < schedule.tolerance);
    let (direct, _) = solver.solve(&project_admissible(&f)).unwrap();
    assert!(sol.u.sub(&direct).max_abs() <= 1e-12 * direct.max_abs());
}

#[test]
fn zero_forcing_stops_at_first_stage() {
    let mesh = HexMesh::unit_cube(4);
    let solver = NeumannSolver::new(&mesh, &ElasticTensorField::isotropic(&mesh, 1.0, 1.0), SolverOptions::default()).unwrap();
    let sol = solve_duality(&solver, &TensorField::zeros(&mesh), &MollificationSchedule::default()).unwrap();
    assert_eq!(sol.stages.len(), 1);
    assert_eq!(sol.u.max_abs(), 0.0);
}

#[test]
fn loop_forcing_iterates_are_cauchy() {
    let mesh = HexMesh::unit_cube(12);
    let c = ElasticTensorField::constant(&mesh, aniso());
    let solver = NeumannSolver::new(&mesh, &c, SolverOptions::default()).unwrap();
    let curl = CurlData::new(&mesh, &LineMeasure::new(vec![square()]), 4.0 / 12.0).unwrap();
    let f = apply_field(&c, &curl.beta_mu);
    let sol = solve_duality(&solver, &f, &MollificationSchedule::default()).unwrap();
    let defects: Vec<f64> = sol.stages.iter().filter_map(|s| s.defect).collect();
    assert!(defects.len() >= 2, "{defects:?}");
    assert!(defects.windows(2).all(|w| w[1] < w[0]), "{defects:?}");
    assert!(*defects.last().unwrap() < 1e-6);
}

#[test]
fn duality_identity_special_cases() {
    let mesh = HexMesh::unit_cube(6);
    let c = ElasticTensorField::constant(&mesh, aniso());
    let solver = NeumannSolver::new(&mesh, &c, SolverOptions::default()).unwrap();
    let schedule = MollificationSchedule::default();
    let f = TensorField::from_fn(&mesh, |x| Mat3::new(x[1], 0.0, 0.0, 0.0, x[2] * x[0], 0.0, 1.0, 0.0, x[0]));
    assert!(verify_duality_identity(&solver, &f, &f, &schedule).unwrap() < 1e-14);
    let k = TensorField::constant(&mesh, Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    assert_eq!(verify_duality_identity(&solver, &f, &k, &schedule).unwrap(), 0.0);
}

fn config() -> IncompatibleConfig {
    IncompatibleConfig {
        duality_checks: 4,
        ..Default::default()
    }
}

#[test]
fn zero_measure_gives_zero_strain() {
    let mesh = HexMesh::unit_cube(8);
    let c = ElasticTensorField::constant(&mesh, aniso());
    let (sol, report) = solve_incompatible(&c, &mesh, &LineMeasure::empty(), &config()).unwrap();
    assert_eq!(sol.beta.max_abs(), 0.0);
    assert_eq!(report.estimate_ratio, None);
}

#[test]
fn pipeline_invariants_for_a_loop() {
    let mesh = HexMesh::unit_cube(16);
    let c = ElasticTensorField::from_fn(&mesh, |x| if x[0] < 0.5 { aniso() } else { Tensor4::isotropic(1.0, 1.0) });
    let (sol, report) = solve_incompatible(&c, &mesh, &LineMeasure::new(vec![square()]), &config()).unwrap();
    let r = &report.residuals;
    assert!(r.curl < 1e-10, "{r:?}");
    assert!(r.divergence < 1e-10, "{r:?}");
    assert!(r.curl_total < 1e-6, "{r:?}");
    assert!(r.gradient_mismatch < 1e-6, "{r:?}");
    assert!(r.momentum < 1e-6, "{r:?}");
    assert!(r.rigid_mean < 1e-10 && r.rigid_skew < 1e-10, "{r:?}");
    assert!(report.duality_defects.iter().all(|d| *d < 1e-8), "{:?}", report.duality_defects);
    assert!(sol.beta.is_finite());
    let ratio = report.estimate_ratio.unwrap();
    assert!(ratio.is_finite() && ratio > 0.0);
}

#[test]
fn doubling_burgers_doubles_strain() {
    let mesh = HexMesh::unit_cube(12);
    let c = ElasticTensorField::constant(&mesh, aniso());
    let m = LineMeasure::new(vec![square()]);
    let cfg = config();
    let (one, _) = solve_incompatible(&c, &mesh, &m, &cfg).unwrap();
    let (two, _) = solve_incompatible(&c, &mesh, &m.scaled(2.0), &cfg).unwrap();
    let scale = one.beta.max_abs();
    assert!(max_diff(&two.beta, &one.beta.scale(2.0)) <= cfg.solver.rtol * scale);
}

#[test]
fn gradient_shift_of_plastic_part_is_absorbed() {
    let mesh = HexMesh::unit_cube(12);
    let c = ElasticTensorField::from_fn(&mesh, |x| if x[1] < 0.5 { aniso() } else { Tensor4::isotropic(1.0, 1.0) });
    let cfg = config();
    let solver = NeumannSolver::new(&mesh, &c, cfg.solver).unwrap();
    let curl = CurlData::new(&mesh, &LineMeasure::new(vec![square()]), 4.0 / 12.0).unwrap();
    let w = VectorField::interpolate(&mesh, |x| {
        [(3.0 * x[1]).sin() * x[2], x[0] * x[0] - x[2], (x[0] * x[1]).cos()]
    });
    let w = incompat::fem::project_rigid(&w, &mesh);
    let (plain, _) = solve_with_curl_data(&solver, &c, &curl, &cfg).unwrap();
    let (shifted, report) = solve_with_curl_data(&solver, &c, &curl.with_gradient_shift(&mesh, &w), &cfg).unwrap();
    assert!(report.residuals.curl_total < 1e-6);
    let a = gauge_free(&plain.beta);
    let b = gauge_free(&shifted.beta);
    let rel = max_diff(&a, &b) / a.max_abs();
    assert!(rel <= 10.0 * cfg.solver.rtol, "gauge mismatch {rel:e}");
}

#[test]
fn estimate_ratio_is_comparable_across_loop_shapes() {
    let mesh = HexMesh::unit_cube(16);
    let c = ElasticTensorField::constant(&mesh, aniso());
    let hexagon = DislocationLoop::regular_polygon([0.5, 0.5, 0.5], 0.25, 6, [1, 2], [0.0, 0.0, 1.0]);
    let pair = LineMeasure::new(vec![
        DislocationLoop::square([0.5, 0.5, 0.4], 0.3, [0, 1], [0.0, 1.0, 0.0]),
        DislocationLoop::square([0.5, 0.5, 0.6], 0.3, [0, 2], [1.0, 0.0, 1.0]),
    ]);
    let cfg = IncompatibleConfig {
        duality_checks: 0,
        ..Default::default()
    };
    let ratios: Vec<f64> = [LineMeasure::new(vec![square()]), LineMeasure::new(vec![hexagon]), pair]
        .iter()
        .map(|m| solve_incompatible(&c, &mesh, m, &cfg).unwrap().1.estimate_ratio.unwrap())
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    assert!(lo > 0.0 && hi.is_finite() && hi / lo < 10.0, "{ratios:?}");
}

#[test]
fn uniqueness_check_examples() {
    let mesh = HexMesh::unit_cube(4);
    let b1 = TensorField::from_fn(&mesh, |x| Mat3::new(x[0], x[1] * x[2], 0.0, 1.0, x[2], 0.0, x[0] * x[0], 0.0, -x[1]));
    assert_eq!(uniqueness_check(&b1, &b1).discrepancy, 0.0);
    let k0 = Mat3::new(0.0, 0.7, -0.2, -0.7, 0.0, 1.3, 0.2, -1.3, 0.0);
    let r = uniqueness_check(&b1, &b1.map(|m| m + k0));
    assert!(r.discrepancy < 1e-12, "{r:?}");
    for i in 0..3 {
        for j in 0..3 {
            assert!((r.offset[i][j] - k0[(i, j)]).abs() < 1e-12);
        }
    }
}

#[test]
fn mollification_dependence_shrinks_under_refinement() {
    let cfg = IncompatibleConfig {
        duality_checks: 0,
        ..Default::default()
    };
    let m = LineMeasure::new(vec![square()]);
    let study = uniqueness_study(&aniso(), [0.0; 3], [1.0; 3], &[8, 12, 16], &m, (4.0, 3.0), &cfg).unwrap();
    let d: Vec<f64> = study.levels.iter().map(|l| l.discrepancy).collect();
    assert!(study.decreasing, "{d:?}");
    assert!(study.levels.iter().all(|l| l.discrepancy.is_finite() && l.discrepancy > 0.0));
    let (mesh, beta) = study.finest.unwrap();
    assert_eq!(mesh.cells(), [16; 3]);
    assert!(beta.lp_norm(Exponent::ThreeHalves) > 0.0);
}
