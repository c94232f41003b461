use std::f64::consts::PI;

use incompat::dislocation::{mollify, mollify_periodic_line, DislocationLoop, LineMeasure, PaddedGrid};
use incompat::spectral::solve_beta_mu;
use incompat::{Exponent, HexMesh, Mat3, TensorField};

/// Infinite straight screw dislocation along `e3` through `(x0, y0)` with
/// Burgers vector `e3`: only the third row is nonzero,
/// `β_3 = (−(y − y0), x − x0, 0) / (2π r²)`.
fn screw(x: [f64; 3], x0: f64, y0: f64) -> [f64; 3] {
    let (dx, dy) = (x[0] - x0, x[1] - y0);
    let r2 = dx * dx + dy * dy;
    [-dy / (2.0 * PI * r2), dx / (2.0 * PI * r2), 0.0]
}

#[test]
fn screw_line_matches_analytic_field_on_annulus() {
    let n = 64;
    let h = 4.0 / n as f64;
    let grid = PaddedGrid::periodic_box([0.0; 3], [h; 3], [n; 3]);
    let (x0, y0) = (2.0 + 0.3 * h, 2.0 - 0.2 * h);
    let mu = mollify_periodic_line(&grid, [x0, y0, 0.0], 2, [0.0, 0.0, 1.0], 2.0 * h).unwrap();
    let beta = solve_beta_mu(&mu).unwrap();
    assert!(beta.curl_residual(&mu, false) < 1e-10);
    assert!(beta.div_residual() < 1e-10);

    let mut worst = 0.0f64;
    for r in [0.2, 0.225, 0.25, 0.275, 0.3] {
        for k in 0..48 {
            let t = 2.0 * PI * k as f64 / 48.0;
            let x = [x0 + r * t.cos(), y0 + r * t.sin(), 1.37];
            let got = beta.sample(x);
            let want = screw(x, x0, y0);
            let err = (0..3).map(|j| (got[(2, j)] - want[j]).powi(2)).sum::<f64>().sqrt();
            let mag = (want[0].powi(2) + want[1].powi(2)).sqrt();
            worst = worst.max(err / mag);
            for i in 0..2 {
                assert!((0..3).all(|j| got[(i, j)].abs() < 1e-12));
            }
        }
    }
    assert!(worst < 0.05, "annulus mismatch {worst}");
}

#[test]
fn zero_measure_gives_zero_field() {
    let mesh = HexMesh::unit_cube(4);
    let grid = PaddedGrid::around(&mesh, 0.5);
    let mu = mollify(&LineMeasure::empty(), &grid, 0.5).unwrap();
    let beta = solve_beta_mu(&mu).unwrap();
    assert_eq!(beta.max_abs(), 0.0);
}

#[test]
fn curl_inverse_identities_and_gauge_shift() {
    let mesh = HexMesh::unit_cube(12);
    let delta = 3.0 / 12.0;
    let grid = PaddedGrid::around(&mesh, delta);
    let l = DislocationLoop::regular_polygon([0.5, 0.45, 0.55], 0.3, 6, [0, 2], [1.0, -0.5, 0.25]);
    let mu = mollify(&LineMeasure::new(vec![l]), &grid, delta).unwrap();
    let beta = solve_beta_mu(&mu).unwrap();
    assert!(beta.curl_residual(&mu, false) < 1e-10);
    assert!(beta.div_residual() < 1e-10);

    let w: Vec<[f64; 3]> = (0..grid.len())
        .map(|n| {
            let c = grid.coords(n);
            let x = c.map(|v| v as f64 / 7.0);
            [x[0].sin() * x[1], (x[2] * x[0]).cos(), x[1] * x[1]]
        })
        .collect();
    let shifted = beta.add_gradient(&w);
    assert!(shifted.curl_residual(&mu, false) < 1e-10);
}

#[test]
fn curl_inverse_is_linear_bitwise() {
    let mesh = HexMesh::unit_cube(8);
    let delta = 2.0 / 8.0;
    let grid = PaddedGrid::around(&mesh, delta);
    let l = DislocationLoop::square([0.5; 3], 0.5, [0, 1], [0.0, 1.0, 0.0]);
    let m = LineMeasure::new(vec![l]);
    let one = solve_beta_mu(&mollify(&m, &grid, delta).unwrap()).unwrap();
    let two = solve_beta_mu(&mollify(&m.scaled(2.0), &grid, delta).unwrap()).unwrap();
    assert_eq!(two, one.scale(2.0));
}

#[test]
fn norm_examples() {
    let mesh = HexMesh::unit_cube(4);
    let unit = TensorField::constant(&mesh, Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    assert!((unit.lp_norm(Exponent::ThreeHalves) - 1.0).abs() < 1e-14);
    assert_eq!(TensorField::zeros(&mesh).lp_norm(Exponent::ThreeHalves), 0.0);
    let half = TensorField::from_fn(&mesh, |x| {
        if x[2] > 0.5 {
            Mat3::new(0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        } else {
            Mat3::zeros()
        }
    });
    let want = (0.5 * 2f64.powf(1.5)).powf(2.0 / 3.0);
    assert!((half.lp_norm(Exponent::ThreeHalves) - want).abs() < 1e-14);
}

/// The `L^{3/2}` norm of `β^μ` scales like `|μ|(Ω)` across loop shapes.
#[test]
fn beta_mu_norm_ratio_is_bounded() {
    let mesh = HexMesh::unit_cube(16);
    let delta = 4.0 / 16.0;
    let grid = PaddedGrid::around(&mesh, delta);
    let loops = [
        DislocationLoop::square([0.5; 3], 0.5, [0, 1], [1.0, 0.0, 0.0]),
        DislocationLoop::regular_polygon([0.5; 3], 0.3, 6, [1, 2], [0.0, 0.0, 1.0]),
        DislocationLoop::square([0.5, 0.5, 0.3], 0.3, [0, 2], [0.0, 1.0, 1.0]),
    ];
    let ratios: Vec<f64> = loops
        .iter()
        .map(|l| {
            let m = LineMeasure::new(vec![l.clone()]);
            let beta = solve_beta_mu(&mollify(&m, &grid, delta).unwrap()).unwrap().to_gauss(&mesh);
            beta.lp_norm(Exponent::ThreeHalves) / incompat::dislocation::total_variation(&m).unwrap()
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    assert!(lo > 0.0 && hi / lo < 10.0, "{ratios:?}");
}
